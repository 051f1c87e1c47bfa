"""Pinhole cameras and volumetric compositing.

Camera convention: right-handed, the camera looks down its -z axis with +y up;
pixel rows grow downwards. Poses are camera-to-world.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._random import counter_uniforms
from .fields import RadianceField, RaySample, SampleBatch, propose_batch
from .geometry import Se3Pose

EPS_ACC = 1e-4
DEFAULT_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class Camera:
    pose: Se3Pose
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.near < self.far):
            raise ValueError("need 0 < near < far")
        if self.width < 1 or self.height < 1:
            raise ValueError("image must be at least 1x1")

    @classmethod
    def from_fov(cls, pose: Se3Pose, width: int, height: int, fov_deg: float, near: float, far: float) -> "Camera":
        f = 0.5 * width / np.tan(0.5 * np.radians(fov_deg))
        return cls(pose, f, f, width / 2.0, height / 2.0, width, height, near, far)

    def with_pose(self, pose: Se3Pose) -> "Camera":
        return Camera(pose, self.fx, self.fy, self.cx, self.cy, self.width, self.height, self.near, self.far)

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation

    def pixel_directions(self, px, py) -> np.ndarray:
        px = np.asarray(px, dtype=float)
        py = np.asarray(py, dtype=float)
        local = np.stack(
            [(px + 0.5 - self.cx) / self.fx, -(py + 0.5 - self.cy) / self.fy, -np.ones_like(px)], axis=-1
        )
        world = local @ self.pose.rotation.T
        return world / np.linalg.norm(world, axis=-1, keepdims=True)

    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Origins and unit directions for every pixel, row-major, shape (H*W, 3)."""
        py, px = np.mgrid[0 : self.height, 0 : self.width]
        d = self.pixel_directions(px.ravel(), py.ravel())
        o = np.broadcast_to(self.pose.translation, d.shape)
        return np.ascontiguousarray(o), d

    def project(self, points) -> np.ndarray:
        """World points to continuous pixel coordinates (pixel centers at +0.5)."""
        local = self.pose.inverse().apply(points)
        z = -local[..., 2]
        u = self.cx + self.fx * local[..., 0] / z
        v = self.cy - self.fy * local[..., 1] / z
        return np.stack([u, v], axis=-1)


def ray_for_pixel(camera: Camera, px: int, py: int) -> tuple[np.ndarray, np.ndarray]:
    if not (0 <= px < camera.width and 0 <= py < camera.height):
        raise IndexError(f"pixel ({px}, {py}) outside {camera.width}x{camera.height} image")
    d = camera.pixel_directions(np.array([px]), np.array([py]))[0]
    return camera.pose.translation.copy(), d


@dataclass
class Composite:
    color: np.ndarray
    accumulation: np.ndarray
    depth: np.ndarray
    weights: np.ndarray  # termination probabilities p_k


def composite_arrays(sigma, delta, t_mid, rgb, far: float | np.ndarray, eps_acc: float = EPS_ACC) -> Composite:
    """Batched compositing along the last sample axis."""
    sigma = np.asarray(sigma, dtype=float)
    if np.isnan(sigma).any():
        raise ValueError("NaN density in ray samples")
    tau = sigma * np.asarray(delta, dtype=float)
    alpha = -np.expm1(-tau)
    # transmittance from the running optical depth: exactly prod(1 - alpha)
    trans = np.exp(-np.concatenate([np.zeros(tau.shape[:-1] + (1,)), np.cumsum(tau, axis=-1)[..., :-1]], axis=-1))
    p = trans * alpha
    acc = p.sum(axis=-1)
    color = np.einsum("...k,...kc->...c", p, rgb)
    num = np.sum(p * t_mid, axis=-1)
    depth = np.where(acc >= eps_acc, num / np.where(acc > 0, acc, 1.0), far)
    return Composite(color, acc, depth, p)


def composite(samples: Sequence[RaySample], far: float = np.inf, eps_acc: float = EPS_ACC) -> Composite:
    """Color, accumulation, expected depth and termination probabilities for one ray.

    Depth is measured at interval midpoints; ``far`` is returned when the
    accumulation is below ``eps_acc``.
    """
    for a, b in zip(samples, samples[1:]):
        if a.t + a.delta > b.t + 1e-12:
            raise ValueError("ray samples must be sorted and non-overlapping")
    if not samples:
        return Composite(np.zeros(3), np.float64(0.0), np.float64(far), np.zeros(0))
    sigma = np.array([s.density for s in samples])
    delta = np.array([s.delta for s in samples])
    mid = np.array([s.mid for s in samples])
    rgb = np.array([s.color for s in samples], dtype=float).reshape(-1, 3)
    return composite_arrays(sigma, delta, mid, rgb, far, eps_acc)


@dataclass
class RenderOutput:
    color: np.ndarray  # (H, W, 3)
    accumulation: np.ndarray  # (H, W)
    depth: np.ndarray  # (H, W)


def ray_ids(camera: Camera) -> np.ndarray:
    return np.arange(camera.width * camera.height, dtype=np.uint64)


def sample_rays(
    field: RadianceField,
    origins: np.ndarray,
    directions: np.ndarray,
    ids: np.ndarray,
    near: float,
    far: float,
    budget: int,
    seed: int | None,
    stream: int = 0,
) -> SampleBatch:
    jitter = None if seed is None else counter_uniforms(seed, stream, ids, budget)
    return propose_batch(field, origins, directions, near, far, budget, jitter)


def map_chunks(fn, n: int, chunk: int, workers: int | None):
    """Apply ``fn(slice)`` over [0, n) in chunks; results are returned in order."""
    slices = [slice(i, min(n, i + chunk)) for i in range(0, n, chunk)]
    if workers and workers > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, slices))
    return [fn(s) for s in slices]


def render(
    field: RadianceField,
    camera: Camera,
    budget: int = 64,
    seed: int | None = 0,
    chunk: int = DEFAULT_CHUNK,
    workers: int | None = None,
) -> RenderOutput:
    """Render ``field`` from ``camera``; ``seed=None`` disables stratified jitter."""
    origins, dirs = camera.rays()
    ids = ray_ids(camera)

    def work(sl):
        batch = sample_rays(field, origins[sl], dirs[sl], ids[sl], camera.near, camera.far, budget, seed)
        return composite_arrays(batch.sigma, batch.delta, batch.mid, batch.rgb, camera.far)

    parts = map_chunks(work, len(ids), chunk, workers)
    h, w = camera.height, camera.width
    color = np.concatenate([p.color for p in parts]).reshape(h, w, 3)
    acc = np.concatenate([p.accumulation for p in parts]).reshape(h, w)
    depth = np.concatenate([p.depth for p in parts]).reshape(h, w)
    return RenderOutput(np.clip(color, 0.0, 1.0), np.clip(acc, 0.0, 1.0), depth)
