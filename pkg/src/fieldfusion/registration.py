"""Registration of two fields from re-rendered views.

Both fields are rendered from poses sampled in their own local frames; a pose
recovery backend returns all of those poses in one shared, arbitrary gauge
frame C. Each field's scale into C comes from ratios of camera-center distances
(median over pairs), and its full similarity into C from per-camera bridges
(element-wise median, projected back onto SIM(3)).
"""
from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .fields import RadianceField
from .geometry import (
    RegistrationError,
    Se3Pose,
    Sim3Transform,
    project_to_rotation,
    random_rotation,
    random_sim3,
    registration_error,
    rotvec_matrix,
)
from .renderer import Camera, render

MAX_FULL_PAIRS = 64
SUBSET_PAIRS = 2016
MIN_PAIR_DISTANCE = 1e-9


class RegistrationFailure(RuntimeError):
    def __init__(self, message: str, field_name: str | None = None):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}" if field_name else message)


class NotEnoughPoses(RegistrationFailure):
    pass


class DegenerateGeometry(RegistrationFailure):
    pass


@dataclass
class PoseSampleSet:
    poses: list[Se3Pose]
    provenance: str = "hemispheric"

    def __post_init__(self):
        if len(self.poses) < 2:
            raise ValueError("a pose sample set needs at least two poses")
        centers = np.array([p.translation for p in self.poses])
        if np.ptp(centers, axis=0).max() <= 0:
            raise ValueError("pose sample set needs distinct camera centers")

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return iter(self.poses)


def sample_hemisphere_poses(
    n: int,
    radius: float = 1.0,
    elevation: tuple[float, float] = (0.0, 30.0),
    look_at=(0.0, 0.0, 0.0),
    seed: int = 0,
    up=(0.0, 0.0, 1.0),
) -> PoseSampleSet:
    """``n`` cameras at distance ``radius`` from ``look_at`` looking at it.

    Elevations are uniform in ``elevation`` (degrees above the plane normal to
    ``up``); azimuths are stratified over the full circle.
    """
    lo, hi = elevation
    if n < 2:
        raise ValueError("need at least two poses")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if not (0.0 <= lo <= hi <= 90.0):
        raise ValueError("elevation range must satisfy 0 <= lo <= hi <= 90")
    rng = np.random.default_rng(seed)
    el = np.radians(rng.uniform(lo, hi, size=n))
    az = 2.0 * np.pi * (np.arange(n) + rng.uniform(size=n)) / n
    up = np.asarray(up, dtype=float)
    up = up / np.linalg.norm(up)
    # orthonormal basis (e1, e2, up) for the horizontal plane
    helper = np.array([1.0, 0.0, 0.0]) if abs(up[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(up, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(up, e1)
    target = np.asarray(look_at, dtype=float)
    poses = []
    for a, e in zip(az, el):
        offset = radius * (math.cos(e) * (math.cos(a) * e1 + math.sin(a) * e2) + math.sin(e) * up)
        poses.append(Se3Pose.look_at(target + offset, target, up))
    return PoseSampleSet(poses, "hemispheric")


# ---------------------------------------------------------------------------
# pose recovery


@dataclass
class PoseRecoveryResult:
    """Recovered gauge-frame pose per submitted image (``None`` marks a failure)."""

    poses: dict[str, list[Se3Pose | None]]

    def recovered(self, name: str) -> list[tuple[int, Se3Pose]]:
        return [(i, p) for i, p in enumerate(self.poses[name]) if p is not None]


class PoseRecoveryBackend(Protocol):
    """Recovers every submitted view in one shared frame.

    A real structure-from-motion adapter would only use ``images``; the
    simulator ignores pixels and uses the local poses plus its hidden truth.
    """

    def recover(
        self, images: dict[str, list[np.ndarray]], local_poses: dict[str, list[Se3Pose]]
    ) -> PoseRecoveryResult: ...


@dataclass
class SfmSimulatorConfig:
    gauge: Sim3Transform | None = None  # hidden world->C map; random from seed when None
    rotation_noise_deg: float = 0.0
    translation_noise: float = 0.0  # std-dev as a fraction of scene_radius
    outlier_fraction: float = 0.0
    dropout_fraction: float = 0.0
    seed: int = 0
    scene_radius: float = 1.0  # world units (SimulatedSfm) or A's units (simulate_sfm)

    def __post_init__(self):
        if self.rotation_noise_deg < 0 or self.translation_noise < 0:
            raise ValueError("noise levels must be non-negative")
        for name in ("outlier_fraction", "dropout_fraction"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.outlier_fraction + self.dropout_fraction >= 1.0:
            raise ValueError("outlier and dropout fractions must leave some clean poses")


def to_gauge(local_pose: Se3Pose, t_xc: Sim3Transform) -> Se3Pose:
    """SE(3) part of ``T_XC G S_XC^-1``: the same camera in C's orientation, position and unit."""
    r = t_xc.rotation @ local_pose.rotation
    t = t_xc.scale * (t_xc.rotation @ local_pose.translation) + t_xc.translation
    return Se3Pose(r, t)


def _simulate_one(local: Sequence[Se3Pose], t_xc: Sim3Transform, cfg: SfmSimulatorConfig, rng,
                  unit_scale: float) -> list:
    """``unit_scale`` converts ``cfg.scene_radius`` into gauge units."""
    n = len(local)
    gauge = [to_gauge(g, t_xc) for g in local]
    centers = np.array([g.translation for g in gauge])
    sphere_center = centers.mean(axis=0)
    sphere_radius = max(float(np.max(np.linalg.norm(centers - sphere_center, axis=1))), 1e-9)
    sigma_r = math.radians(cfg.rotation_noise_deg)
    sigma_t = cfg.translation_noise * cfg.scene_radius * unit_scale
    out: list[Se3Pose | None] = []
    for g in gauge:
        r = g.rotation
        t = g.translation
        if sigma_r > 0:
            r = project_to_rotation(rotvec_matrix(rng.normal(scale=sigma_r, size=3)) @ r)
        if sigma_t > 0:
            t = t + rng.normal(scale=sigma_t, size=3)
        out.append(g if (sigma_r == 0 and sigma_t == 0) else Se3Pose(r, t))
    order = rng.permutation(n)
    n_out = int(math.floor(cfg.outlier_fraction * n + 1e-9))
    n_drop = int(math.floor(cfg.dropout_fraction * n + 1e-9))
    for i in order[:n_out]:
        # uniform in the ball spanned by the cameras
        v = rng.normal(size=3)
        v *= sphere_radius * rng.uniform() ** (1.0 / 3.0) / np.linalg.norm(v)
        out[i] = Se3Pose(random_rotation(rng), sphere_center + v)
    for i in order[n_out : n_out + n_drop]:
        out[i] = None
    return out


def simulate_sfm(
    local_poses_a: Sequence[Se3Pose],
    local_poses_b: Sequence[Se3Pose],
    true_t_ac: Sim3Transform,
    true_t_bc: Sim3Transform,
    cfg: SfmSimulatorConfig,
) -> PoseRecoveryResult:
    rng = np.random.default_rng(cfg.seed)
    return PoseRecoveryResult(
        {
            "A": _simulate_one(list(local_poses_a), true_t_ac, cfg, rng, true_t_ac.scale),
            "B": _simulate_one(list(local_poses_b), true_t_bc, cfg, rng, true_t_ac.scale),
        }
    )


class SimulatedSfm:
    """Backend that knows each field's true map into a common world frame.

    The hidden gauge C is ``cfg.gauge`` composed after the world frame, so every
    recovered pose is expressed with an arbitrary orientation, origin and unit.
    """

    def __init__(self, truth: dict[str, Sim3Transform], cfg: SfmSimulatorConfig | None = None):
        self.truth = dict(truth)
        self.cfg = cfg or SfmSimulatorConfig()
        rng = np.random.default_rng([self.cfg.seed, 1])
        self.gauge = self.cfg.gauge or random_sim3(rng, (0.2, 5.0), translation_scale=3.0)

    def recover(self, images, local_poses) -> PoseRecoveryResult:
        rng = np.random.default_rng(self.cfg.seed)
        out = {}
        for name in sorted(local_poses):
            if name not in self.truth:
                raise RegistrationFailure("backend has no ground truth for this field", name)
            out[name] = _simulate_one(local_poses[name], self.gauge.compose(self.truth[name]), self.cfg, rng,
                                      self.gauge.scale)
        return PoseRecoveryResult(out)


# ---------------------------------------------------------------------------
# estimators


def _pairs(n: int, seed: int = 0) -> list[tuple[int, int]]:
    if n <= MAX_FULL_PAIRS:
        return list(itertools.combinations(range(n), 2))
    rng = np.random.default_rng(seed)
    chosen: set[tuple[int, int]] = set()
    while len(chosen) < SUBSET_PAIRS:
        i, j = rng.choice(n, size=2, replace=False)
        chosen.add((int(min(i, j)), int(max(i, j))))
    return sorted(chosen)


def scale_ratios(local_poses: Sequence[Se3Pose], gauge_poses: Sequence[tuple[int, Se3Pose]], seed: int = 0) -> np.ndarray:
    """Camera-center distance ratios (gauge over local) for every usable pair."""
    if len(gauge_poses) < 2:
        raise NotEnoughPoses(f"need at least 2 recovered poses, got {len(gauge_poses)}")
    ratios = []
    for a, b in _pairs(len(gauge_poses), seed):
        i, gi = gauge_poses[a]
        j, gj = gauge_poses[b]
        d_local = np.linalg.norm(local_poses[i].translation - local_poses[j].translation)
        if d_local < MIN_PAIR_DISTANCE:
            continue
        ratios.append(np.linalg.norm(gi.translation - gj.translation) / d_local)
    if not ratios:
        raise DegenerateGeometry("all pose pairs share a camera center")
    return np.array(ratios)


def recover_scale(local_poses: Sequence[Se3Pose], gauge_poses: Sequence[tuple[int, Se3Pose]], seed: int = 0) -> float:
    """Median over pairs of the gauge/local camera-distance ratio."""
    return float(np.median(scale_ratios(local_poses, gauge_poses, seed)))


def bridge_candidates(
    local_poses: Sequence[Se3Pose], gauge_poses: Sequence[tuple[int, Se3Pose]], scale: float
) -> list[Sim3Transform]:
    """One ``T_XC = G^C S G^X^-1`` per recovered camera."""
    out = []
    for i, g_c in gauge_poses:
        g_x = local_poses[i]
        r = g_c.rotation @ g_x.rotation.T
        t = g_c.translation - scale * (r @ g_x.translation)
        out.append(Sim3Transform(Se3Pose(r, t), scale))
    return out


def median_sim3(candidates: Sequence[Sim3Transform], scale: float) -> Sim3Transform:
    rots = np.array([c.rotation for c in candidates])
    trans = np.array([c.translation for c in candidates])
    r = project_to_rotation(np.median(rots, axis=0))
    return Sim3Transform(Se3Pose(r, np.median(trans, axis=0)), scale)


def recover_transform(
    local_poses: Sequence[Se3Pose], gauge_poses: Sequence[tuple[int, Se3Pose]], scale: float
) -> Sim3Transform:
    if not gauge_poses:
        raise NotEnoughPoses("no recovered poses")
    if not scale > 0:
        raise ValueError("scale must be positive")
    return median_sim3(bridge_candidates(local_poses, gauge_poses, scale), scale)


# ---------------------------------------------------------------------------
# full pipeline


@dataclass
class SamplerSettings:
    n_poses: int = 32
    radius: float | None = None  # None: radius_scale times the bounds half-diagonal
    radius_scale: float = 1.5
    elevation: tuple[float, float] = (0.0, 30.0)
    seed: int = 0

    def radius_for(self, f: RadianceField) -> float:
        if self.radius is not None:
            return self.radius
        return self.radius_scale * 0.5 * float(np.linalg.norm(f.hi - f.lo))


@dataclass
class RenderSettings:
    width: int = 64
    height: int = 64
    fov_deg: float = 50.0
    budget: int = 32
    seed: int = 0


@dataclass
class FieldEstimate:
    name: str
    scale: float
    transform: Sim3Transform
    candidates: list[Sim3Transform]
    n_recovered: int


@dataclass
class RegistrationResult:
    t_ba: Sim3Transform
    estimates: dict[str, FieldEstimate]
    image_hashes: dict[str, list[str]]
    error: RegistrationError | None = None
    truth: Sim3Transform | None = None
    local_poses: dict[str, list[Se3Pose]] = field(default_factory=dict)


def render_views(f: RadianceField, poses: Sequence[Se3Pose], radius: float, settings: RenderSettings) -> list[np.ndarray]:
    near, far = 0.05 * radius, 3.0 * radius
    images = []
    for p in poses:
        cam = Camera.from_fov(p, settings.width, settings.height, settings.fov_deg, near, far)
        images.append(render(f, cam, settings.budget, seed=settings.seed).color)
    return images


def image_digest(img: np.ndarray) -> str:
    q = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    return hashlib.sha256(q.tobytes()).hexdigest()


def estimate_field(name: str, local: Sequence[Se3Pose], recovered: PoseRecoveryResult, seed: int = 0) -> FieldEstimate:
    gauge = recovered.recovered(name)
    try:
        s = recover_scale(local, gauge, seed)
        cands = bridge_candidates(local, gauge, s)
        t = median_sim3(cands, s) if cands else None
    except RegistrationFailure as exc:
        raise type(exc)(str(exc), name) from None
    if t is None:
        raise NotEnoughPoses("no recovered poses", name)
    return FieldEstimate(name, s, t, cands, len(gauge))


def register_fields(
    field_a: RadianceField,
    field_b: RadianceField,
    backend: PoseRecoveryBackend,
    sampler: SamplerSettings | None = None,
    render_settings: RenderSettings | None = None,
    truth_t_ba: Sim3Transform | None = None,
    poses: dict[str, Sequence[Se3Pose]] | None = None,
) -> RegistrationResult:
    """Estimate ``T_BA`` (B's frame into A's) by re-rendering both fields.

    ``poses`` overrides the hemispheric sampler with explicit local poses.
    """
    sampler = sampler or SamplerSettings()
    render_settings = render_settings or RenderSettings()
    fields = {"A": field_a, "B": field_b}
    local: dict[str, list[Se3Pose]] = {}
    images: dict[str, list[np.ndarray]] = {}
    for k, (name, f) in enumerate(fields.items()):
        radius = sampler.radius_for(f)
        if poses is not None and name in poses:
            local[name] = list(poses[name])
        else:
            local[name] = sample_hemisphere_poses(
                sampler.n_poses, radius, sampler.elevation, f.origin, seed=sampler.seed + k
            ).poses
        images[name] = render_views(f, local[name], radius, render_settings)
    recovered = backend.recover(images, local)
    estimates = {name: estimate_field(name, local[name], recovered, sampler.seed) for name in fields}
    t_ba = estimates["A"].transform.inverse().compose(estimates["B"].transform)
    err = registration_error(truth_t_ba, t_ba) if truth_t_ba is not None else None
    hashes = {name: [image_digest(im) for im in imgs] for name, imgs in images.items()}
    return RegistrationResult(t_ba, estimates, hashes, err, truth_t_ba, local)
