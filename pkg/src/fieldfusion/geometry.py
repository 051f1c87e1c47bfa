"""Rigid (SE(3)) and similarity (SIM(3)) transforms and registration error metrics.

Conventions
-----------
A similarity transform with rotation ``R``, translation ``t`` and scale ``s``
maps a point as ``p' = s * R @ p + t``; as a 4x4 matrix it is ``[[s R, t], [0, 1]]``,
i.e. ``G @ S`` with ``G = [[R, t], [0, 1]]`` and ``S = diag(s, s, s, 1)``.
Poses are camera-to-world.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

ORTHONORMAL_TOL = 1e-9


def _as_rotation(rotation) -> np.ndarray:
    r = np.array(rotation, dtype=float).reshape(3, 3)
    if not np.all(np.isfinite(r)):
        raise ValueError("rotation has non-finite entries")
    if np.linalg.norm(r.T @ r - np.eye(3)) > ORTHONORMAL_TOL * 1e3:
        raise ValueError("rotation is not orthonormal")
    if np.linalg.det(r) <= 0:
        raise ValueError("rotation has negative determinant")
    return r


def project_to_rotation(matrix) -> np.ndarray:
    """Frobenius-nearest rotation (det +1) to an arbitrary 3x3 matrix."""
    u, _, vt = np.linalg.svd(np.asarray(matrix, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    if d == 0:
        d = 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def rotation_angle_deg(rotation) -> float:
    """Rotation angle of ``rotation`` in degrees.

    Uses atan2(sin, cos) with sin taken from the skew part: arccos of the trace
    alone cannot resolve angles below ~1e-6 degrees in double precision.
    """
    r = np.asarray(rotation, dtype=float)
    skew = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return math.degrees(math.atan2(0.5 * float(np.linalg.norm(skew)), 0.5 * (np.trace(r) - 1.0)))


def axis_angle_matrix(axis, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0 or angle_rad == 0:
        return np.eye(3)
    k = axis / n
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle_rad) * kx + (1.0 - math.cos(angle_rad)) * (kx @ kx)


def rotvec_matrix(rotvec) -> np.ndarray:
    rotvec = np.asarray(rotvec, dtype=float)
    return axis_angle_matrix(rotvec, float(np.linalg.norm(rotvec)))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform random rotation."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True, eq=False)
class Se3Pose:
    """Rigid transform ``p' = R p + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = _as_rotation(self.rotation)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation has non-finite entries")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Se3Pose":
        return cls()

    @classmethod
    def from_matrix(cls, matrix) -> "Se3Pose":
        m = np.asarray(matrix, dtype=float).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> "Se3Pose":
        """Camera-to-world pose at ``eye`` whose -z axis points at ``target`` (camera y up)."""
        eye = np.asarray(eye, dtype=float)
        forward = np.asarray(target, dtype=float) - eye
        forward /= np.linalg.norm(forward)
        z = -forward
        up = np.asarray(up, dtype=float)
        x = np.cross(up, z)
        if np.linalg.norm(x) < 1e-9:
            # looking straight along the up vector
            x = np.cross(np.array([0.0, 1.0, 0.0]) if abs(up[1]) < 0.9 else np.array([1.0, 0.0, 0.0]), z)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return cls(np.stack([x, y, z], axis=1), eye)

    @property
    def center(self) -> np.ndarray:
        return self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Se3Pose":
        rt = self.rotation.T
        return Se3Pose(rt, -rt @ self.translation)

    def compose(self, other: "Se3Pose") -> "Se3Pose":
        return Se3Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def allclose(self, other: "Se3Pose", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix(), other.matrix(), rtol=0.0, atol=atol))

    def __repr__(self) -> str:
        return f"Se3Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


@dataclass(frozen=True, eq=False)
class Sim3Transform:
    """Similarity transform ``p' = scale * R p + t``, stored as ``G S``."""

    pose: Se3Pose = field(default_factory=Se3Pose)
    scale: float = 1.0

    def __post_init__(self):
        s = float(self.scale)
        if not (math.isfinite(s) and s > 0):
            raise ValueError(f"scale must be positive and finite, got {self.scale!r}")
        object.__setattr__(self, "scale", s)

    @classmethod
    def identity(cls) -> "Sim3Transform":
        return cls()

    @classmethod
    def from_parts(cls, rotation, translation, scale: float = 1.0) -> "Sim3Transform":
        return cls(Se3Pose(rotation, translation), scale)

    @classmethod
    def from_matrix(cls, matrix) -> "Sim3Transform":
        """Parse ``[[s R, t], [0, 1]]``; the scale is recovered from the column norms."""
        m = np.asarray(matrix, dtype=float).reshape(4, 4)
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-12):
            raise ValueError("bottom row of a SIM(3) matrix must be 0 0 0 1")
        block = m[:3, :3]
        norms = np.linalg.norm(block, axis=0)
        s = float(np.mean(norms))
        if s <= 0 or not np.allclose(norms, s, rtol=1e-6, atol=0.0):
            raise ValueError("upper-left block is not a uniformly scaled rotation")
        return cls(Se3Pose(block / s, m[:3, 3]), s)

    @property
    def rotation(self) -> np.ndarray:
        return self.pose.rotation

    @property
    def translation(self) -> np.ndarray:
        return self.pose.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.scale * self.pose.rotation
        m[:3, 3] = self.pose.translation
        return m

    def compose(self, other: "Sim3Transform") -> "Sim3Transform":
        r = self.rotation @ other.rotation
        t = self.scale * (self.rotation @ other.translation) + self.translation
        return Sim3Transform(Se3Pose(r, t), self.scale * other.scale)

    __matmul__ = compose

    def inverse(self) -> "Sim3Transform":
        rt = self.rotation.T
        return Sim3Transform(Se3Pose(rt, -(rt @ self.translation) / self.scale), 1.0 / self.scale)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return self.scale * (p @ self.rotation.T) + self.translation

    def apply_direction(self, directions) -> np.ndarray:
        """Rotate directions; unit length is preserved."""
        return np.asarray(directions, dtype=float) @ self.rotation.T

    def allclose(self, other: "Sim3Transform", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix(), other.matrix(), rtol=0.0, atol=atol))

    def __repr__(self) -> str:
        return f"Sim3Transform(pose={self.pose!r}, scale={self.scale!r})"


def compose_sim3(pose: Se3Pose, scale: float) -> Sim3Transform:
    return Sim3Transform(pose, scale)


def decompose_sim3(t: Sim3Transform) -> tuple[Se3Pose, float]:
    """Split ``T = G S`` into its rigid part ``G`` and uniform scale ``s``."""
    return t.pose, t.scale


def determinant_scale(t: Sim3Transform) -> float:
    """Uniform scale recovered as the cube root of the 4x4 determinant."""
    return float(np.cbrt(np.linalg.det(t.matrix())))


def sim3_times_se3(t: Sim3Transform, g: Se3Pose) -> Sim3Transform:
    return t.compose(Sim3Transform(g, 1.0))


def convert_query_pose(g_b: Se3Pose, t_ba: Sim3Transform) -> Se3Pose:
    """Re-express a camera pose of field B in field A's frame: ``T_BA G_B S_BA^-1``.

    The rotation block loses the scale factor; the translation is the camera
    center mapped into A's units.
    """
    r = t_ba.rotation @ g_b.rotation
    t = t_ba.scale * (t_ba.rotation @ g_b.translation) + t_ba.translation
    return Se3Pose(r, t)


@dataclass(frozen=True)
class RegistrationError:
    r_err: float  # degrees
    t_err: float  # reference-field units
    s_err: float  # |log scale ratio|

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.r_err, self.t_err, self.s_err)

    def is_failure(self, r_max: float = 5.0, t_max: float = 0.2, s_max: float = 0.1) -> bool:
        vals = self.as_tuple()
        if any(math.isnan(v) for v in vals):
            return True
        return self.r_err > r_max or self.t_err > t_max or self.s_err > s_max


def registration_error(t_true: Sim3Transform, t_est: Sim3Transform) -> RegistrationError:
    """Errors of ``delta = t_est t_true^-1`` split as ``delta_G delta_S``."""
    delta = t_est.compose(t_true.inverse())
    g, s = decompose_sim3(delta)
    return RegistrationError(
        r_err=rotation_angle_deg(g.rotation),
        t_err=float(np.linalg.norm(g.translation)),
        s_err=abs(math.log(s)),
    )


def random_sim3(rng: np.random.Generator, scale_range=(0.3, 3.0), translation_scale: float = 1.0) -> Sim3Transform:
    """Random similarity with log-uniform scale."""
    lo, hi = scale_range
    s = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
    t = rng.normal(size=3) * translation_scale
    return Sim3Transform(Se3Pose(random_rotation(rng), t), s)


def format_matrix(m: np.ndarray) -> list[str]:
    return [" ".join(repr(float(v)) for v in row) for row in np.asarray(m)]


def parse_matrix(values: Iterable[float]) -> np.ndarray:
    arr = np.array(list(values), dtype=float)
    if arr.size != 16:
        raise ValueError(f"expected 16 numbers for a 4x4 matrix, got {arr.size}")
    return arr.reshape(4, 4)
