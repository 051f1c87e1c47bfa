"""Turn a SceneConfig into fields, frames and cameras."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..blending import RegisteredFieldSet
from ..fields import (
    CompositeField,
    GaussianBlobField,
    RadianceField,
    UniformBoxField,
    UniformSphereField,
    VoxelGridField,
    degraded_copy,
    field_in_frame,
)
from ..geometry import Se3Pose, Sim3Transform, convert_query_pose, parse_matrix, random_sim3
from ..renderer import Camera
from .config import CameraSpec, ConfigError, SceneConfig


def camera_in_frame(camera: Camera, t: Sim3Transform) -> Camera:
    """The same camera after mapping the world by ``t``; near/far follow the unit change."""
    pose = convert_query_pose(camera.pose, t)
    return Camera(pose, camera.fx, camera.fy, camera.cx, camera.cy, camera.width, camera.height,
                  camera.near * t.scale, camera.far * t.scale)


def box_downsample(img: np.ndarray, k: int) -> np.ndarray:
    """Average non-overlapping k x k blocks (k=1 returns the input)."""
    if k == 1:
        return img
    h, w = img.shape[0] // k, img.shape[1] // k
    return img.reshape(h, k, w, k, *img.shape[2:]).mean(axis=(1, 3))


def build_cameras(spec: CameraSpec) -> list[Camera]:
    """Cameras at the render resolution (``supersample`` times the output size)."""
    k = spec.supersample
    return [
        Camera.from_fov(Se3Pose.look_at(eye, spec.target, spec.up), spec.width * k, spec.height * k,
                        spec.fov, spec.near, spec.far)
        for eye in spec.eyes
    ]


@dataclass
class View:
    camera_name: str
    index: int
    world: Camera
    supersample: int

    @property
    def label(self) -> str:
        return f"{self.camera_name}_{self.index:02d}"


class Scene:
    def __init__(self, config: SceneConfig, base_dir: Path | str = "."):
        self.config = config
        self.base_dir = Path(base_dir)
        self._shapes: dict[str, RadianceField] = {}
        self.names = [f.name for f in config.fields]
        self.world_fields: list[RadianceField] = []
        self.gauges: list[Sim3Transform] = []
        self.local_fields: list[RadianceField] = []
        for i, spec in enumerate(config.fields):
            parts = [self.shape(p) for p in spec.parts]
            world = CompositeField(parts, origin=spec.origin)
            gauge = self._gauge(spec.gauge, i)
            self.world_fields.append(world)
            self.gauges.append(gauge)
            # local frame: p_world = gauge p_local
            self.local_fields.append(world if spec.gauge == "identity" else field_in_frame(world, gauge.inverse()))
        self.truth = CompositeField([self.shape(p) for p in config.truth]) if config.truth else None
        self.views = [
            View(c.name, j, cam, c.supersample)
            for c in config.cameras
            for j, cam in enumerate(build_cameras(c))
        ]

    def _gauge(self, value, index: int) -> Sim3Transform:
        if value == "identity":
            return Sim3Transform()
        if value == "random":
            return random_sim3(np.random.default_rng([self.config.seed, 7, index]))
        try:
            return Sim3Transform.from_matrix(parse_matrix(value))
        except ValueError as exc:
            raise ConfigError(f"invalid gauge: {exc}", section=f"field.{self.names[index]}", key="gauge") from None

    def shape(self, name: str) -> RadianceField:
        if name not in self._shapes:
            self._shapes[name] = self._build_shape(name)
        return self._shapes[name]

    def _build_shape(self, name: str) -> RadianceField:
        s = self.config.shapes[name]
        p = s.params
        if s.kind == "sphere":
            return UniformSphereField(p["center"], p["radius"], p["density"], p["color"])
        if s.kind == "box":
            return UniformBoxField(p["lo"], p["hi"], p["density"], p["color"])
        if s.kind == "gaussian":
            return GaussianBlobField(p["center"], p["peak"], p["spread"], p["color"], p["truncate"])
        if s.kind == "voxel":
            return VoxelGridField.load(self.base_dir / p["path"], p["lo"], p["hi"])
        if s.kind == "degraded":
            res = p["resolution"][0] if len(p["resolution"]) == 1 else p["resolution"]
            return degraded_copy(self.shape(p["source"]), res, p["pad"], p["color"], p["color_noise"], p["seed"])
        return CompositeField([self.shape(q) for q in p["parts"]])

    # frames -------------------------------------------------------------

    @property
    def world_to_reference(self) -> Sim3Transform:
        return self.gauges[0].inverse()

    def true_transform(self, i: int) -> Sim3Transform:
        """Ground-truth map from field ``i``'s local frame into the reference frame."""
        return self.world_to_reference.compose(self.gauges[i])

    def field_set(self, transforms: dict[int, Sim3Transform] | None = None) -> RegisteredFieldSet:
        """Fields placed in the reference frame; ``transforms`` default to the truth."""
        transforms = transforms or {}
        others = [(self.local_fields[i], transforms.get(i, self.true_transform(i)))
                  for i in range(1, len(self.local_fields))]
        return RegisteredFieldSet(self.local_fields[0], others, self.names)

    def reference_camera(self, view: View) -> Camera:
        if self.config.fields[0].gauge == "identity":
            return view.world
        return camera_in_frame(view.world, self.world_to_reference)

    def local_camera(self, view: View, i: int) -> Camera:
        if self.config.fields[i].gauge == "identity":
            return view.world
        return camera_in_frame(view.world, self.gauges[i].inverse())

    def world_radius(self, i: int = 0) -> float:
        r = self.config.register
        if r.radius is not None:
            return r.radius
        f = self.world_fields[i]
        return r.radius_scale * 0.5 * float(np.linalg.norm(f.hi - f.lo))
