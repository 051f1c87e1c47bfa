"""Queryable radiance fields standing in for trained neural fields.

Every field maps points and view directions to a density (1/unit length) and an
RGB color in [0, 1]. Fields are immutable; ``query`` is pure and vectorized, so it
can be called from many threads at once.
"""
from __future__ import annotations

import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._random import counter_uniforms
from .geometry import Sim3Transform

DIRECTION_TOL = 1e-6


@dataclass(frozen=True)
class FieldSample:
    density: float
    color: tuple[float, float, float]

    def __post_init__(self):
        if not (np.isfinite(self.density) and self.density >= 0):
            raise ValueError(f"density must be finite and non-negative, got {self.density}")
        if any(not (0.0 <= c <= 1.0) for c in self.color):
            raise ValueError(f"color channels must lie in [0, 1], got {self.color}")


@dataclass(frozen=True)
class RaySample:
    """One interval ``[t, t + delta]`` along a ray with the field values at its midpoint."""

    t: float
    delta: float
    density: float
    color: tuple[float, float, float]

    @property
    def mid(self) -> float:
        return self.t + 0.5 * self.delta


class RadianceField(ABC):
    """Density + color over an axis-aligned box; zero density outside the box."""

    def __init__(self, lo, hi, origin=None):
        lo = np.array(lo, dtype=float).reshape(3)
        hi = np.array(hi, dtype=float).reshape(3)
        if np.any(hi < lo):
            raise ValueError("bounds must satisfy lo <= hi")
        self.lo, self.hi = lo, hi
        self.origin = 0.5 * (lo + hi) if origin is None else np.array(origin, dtype=float).reshape(3)
        for a in (self.lo, self.hi, self.origin):
            a.flags.writeable = False

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lo, self.hi

    def inside(self, points: np.ndarray) -> np.ndarray:
        return np.all((points >= self.lo) & (points <= self.hi), axis=-1)

    @abstractmethod
    def _evaluate(self, points: np.ndarray, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Density (N,) and color (N, 3) for points already known to lie inside the bounds."""

    def query(self, points, directions=None) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized query over ``(..., 3)`` points; returns density ``(...)`` and color ``(..., 3)``."""
        points = np.asarray(points, dtype=float)
        shape = points.shape[:-1]
        pts = points.reshape(-1, 3)
        if directions is None:
            dirs = np.zeros_like(pts)
        else:
            dirs = np.broadcast_to(np.asarray(directions, dtype=float), points.shape).reshape(-1, 3)
        sigma = np.zeros(pts.shape[0])
        rgb = np.zeros((pts.shape[0], 3))
        mask = self.inside(pts)
        if mask.any():
            s, c = self._evaluate(pts[mask], dirs[mask])
            sigma[mask] = s
            rgb[mask] = c
        return sigma.reshape(shape), rgb.reshape(shape + (3,))

    def sample(self, point, direction=(0.0, 0.0, -1.0)) -> FieldSample:
        sigma, rgb = self.query(np.asarray(point, dtype=float)[None], np.asarray(direction, dtype=float)[None])
        return FieldSample(float(sigma[0]), tuple(float(c) for c in rgb[0]))


def _color(color) -> np.ndarray:
    c = np.array(color, dtype=float).reshape(3)
    if np.any(c < 0) or np.any(c > 1):
        raise ValueError(f"color channels must lie in [0, 1], got {color}")
    return c


def _density(density) -> float:
    d = float(density)
    if not (np.isfinite(d) and d >= 0):
        raise ValueError(f"density must be finite and non-negative, got {density}")
    return d


class UniformSphereField(RadianceField):
    def __init__(self, center, radius: float, density: float, color, origin=None):
        self.center = np.array(center, dtype=float).reshape(3)
        self.radius = float(radius)
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        self.density = _density(density)
        self.color = _color(color)
        super().__init__(self.center - self.radius, self.center + self.radius, origin)

    def _evaluate(self, points, directions):
        d2 = np.sum((points - self.center) ** 2, axis=-1)
        sigma = np.where(d2 <= self.radius**2, self.density, 0.0)
        return sigma, np.broadcast_to(self.color, points.shape)


class UniformBoxField(RadianceField):
    def __init__(self, lo, hi, density: float, color, origin=None):
        self.density = _density(density)
        self.color = _color(color)
        super().__init__(lo, hi, origin)

    def _evaluate(self, points, directions):
        return np.full(points.shape[0], self.density), np.broadcast_to(self.color, points.shape)


class GaussianBlobField(RadianceField):
    """Isotropic Gaussian density truncated at ``truncate`` standard deviations."""

    def __init__(self, center, peak: float, spread: float, color, truncate: float = 3.0, origin=None):
        self.center = np.array(center, dtype=float).reshape(3)
        self.peak = _density(peak)
        self.spread = float(spread)
        if self.spread <= 0:
            raise ValueError("spread must be positive")
        self.color = _color(color)
        self.truncate = float(truncate)
        half = self.truncate * self.spread
        super().__init__(self.center - half, self.center + half, origin)

    def _evaluate(self, points, directions):
        d2 = np.sum((points - self.center) ** 2, axis=-1)
        return self.peak * np.exp(-0.5 * d2 / self.spread**2), np.broadcast_to(self.color, points.shape)


class VoxelGridField(RadianceField):
    """Node-sampled grid spanning the bounds: trilinear density, nearest-node color.

    ``grid`` has shape ``(nx, ny, nz, 4)`` holding (sigma, r, g, b) per node.
    """

    def __init__(self, lo, hi, grid, origin=None):
        grid = np.array(grid, dtype=float)
        if grid.ndim != 4 or grid.shape[-1] != 4 or min(grid.shape[:3]) < 2:
            raise ValueError("grid must have shape (nx, ny, nz, 4) with every n >= 2")
        if np.any(grid[..., 0] < 0) or not np.all(np.isfinite(grid)):
            raise ValueError("grid densities must be finite and non-negative")
        grid[..., 1:] = np.clip(grid[..., 1:], 0.0, 1.0)
        grid.flags.writeable = False
        self.grid = grid
        super().__init__(lo, hi, origin)
        self.resolution = np.array(grid.shape[:3])
        extent = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        self._cell = extent / (self.resolution - 1)

    @classmethod
    def from_field(cls, field: RadianceField, resolution: int | Sequence[int], lo=None, hi=None, origin=None):
        lo = field.lo if lo is None else np.asarray(lo, dtype=float)
        hi = field.hi if hi is None else np.asarray(hi, dtype=float)
        res = np.broadcast_to(np.asarray(resolution, dtype=int), (3,))
        axes = [np.linspace(lo[i], hi[i], res[i]) for i in range(3)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        sigma, rgb = field.query(pts)
        grid = np.concatenate([sigma[..., None], rgb], axis=-1)
        return cls(lo, hi, grid, field.origin if origin is None else origin)

    def _evaluate(self, points, directions):
        f = (points - self.lo) / self._cell
        n = self.resolution
        i0 = np.clip(np.floor(f).astype(int), 0, n - 2)
        w = np.clip(f - i0, 0.0, 1.0)
        dens = self.grid[..., 0]
        sigma = np.zeros(points.shape[0])
        for dx in (0, 1):
            wx = w[:, 0] if dx else 1.0 - w[:, 0]
            for dy in (0, 1):
                wy = w[:, 1] if dy else 1.0 - w[:, 1]
                for dz in (0, 1):
                    wz = w[:, 2] if dz else 1.0 - w[:, 2]
                    sigma += wx * wy * wz * dens[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
        near = np.clip(np.rint(f).astype(int), 0, n - 1)
        rgb = self.grid[near[:, 0], near[:, 1], near[:, 2], 1:]
        return sigma, rgb

    # Raw format: uint32 nx, ny, nz (little-endian), then nx*ny*nz records of
    # float32 (sigma, r, g, b) with x varying fastest.
    def save(self, path) -> None:
        nx, ny, nz = (int(v) for v in self.resolution)
        body = np.ascontiguousarray(self.grid.transpose(2, 1, 0, 3), dtype="<f4")
        with open(path, "wb") as fh:
            fh.write(struct.pack("<3I", nx, ny, nz))
            fh.write(body.tobytes())

    @classmethod
    def load(cls, path, lo, hi, origin=None) -> "VoxelGridField":
        data = Path(path).read_bytes()
        if len(data) < 12:
            raise ValueError(f"{path}: truncated voxel header")
        nx, ny, nz = struct.unpack("<3I", data[:12])
        expected = 12 + nx * ny * nz * 16
        if len(data) != expected:
            raise ValueError(f"{path}: expected {expected} bytes for a {nx}x{ny}x{nz} grid, found {len(data)}")
        body = np.frombuffer(data, dtype="<f4", offset=12).astype(float).reshape(nz, ny, nx, 4)
        return cls(lo, hi, body.transpose(2, 1, 0, 3), origin)


def degraded_copy(
    field: RadianceField,
    resolution: int | Sequence[int],
    pad: float = 0.0,
    color=None,
    color_noise: float = 0.0,
    seed: int = 0,
) -> VoxelGridField:
    """A low-fidelity reconstruction of ``field``: voxelized over its padded bounds.

    ``color`` overrides every node color (useful when the padding samples empty
    space); ``color_noise`` adds seeded Gaussian noise to node colors.
    """
    lo, hi = field.lo - pad, field.hi + pad
    grid = VoxelGridField.from_field(field, resolution, lo, hi).grid.copy()
    if color is not None:
        grid[..., 1:] = _color(color)
    if color_noise > 0:
        rng = np.random.default_rng(seed)
        grid[..., 1:] += rng.normal(scale=color_noise, size=grid[..., 1:].shape)
    return VoxelGridField(lo, hi, grid, field.origin)


class CompositeField(RadianceField):
    """Densities add; colors are density-weighted."""

    def __init__(self, fields: Sequence[RadianceField], origin=None):
        if not fields:
            raise ValueError("composite needs at least one field")
        self.fields = tuple(fields)
        lo = np.min([f.lo for f in self.fields], axis=0)
        hi = np.max([f.hi for f in self.fields], axis=0)
        super().__init__(lo, hi, origin)

    def _evaluate(self, points, directions):
        total = np.zeros(points.shape[0])
        acc = np.zeros((points.shape[0], 3))
        for f in self.fields:
            s, c = f.query(points, directions)
            total += s
            acc += s[:, None] * c
        rgb = np.divide(acc, total[:, None], out=np.zeros_like(acc), where=total[:, None] > 0)
        return total, np.clip(rgb, 0.0, 1.0)


class TransformedField(RadianceField):
    """A field seen through ``p_outer = T p_inner``.

    Density is divided by the scale so that ``sigma * delta`` (and thus opacity)
    is unchanged when lengths are measured in outer units.
    """

    def __init__(self, inner: RadianceField, transform: Sim3Transform):
        self.inner = inner
        self.transform = transform
        self._inverse = transform.inverse()
        corners = np.array([[x, y, z] for x in (inner.lo[0], inner.hi[0])
                            for y in (inner.lo[1], inner.hi[1]) for z in (inner.lo[2], inner.hi[2])])
        moved = transform.apply(corners)
        super().__init__(moved.min(axis=0), moved.max(axis=0), transform.apply(inner.origin))

    def _evaluate(self, points, directions):
        sigma, rgb = self.inner.query(self._inverse.apply(points), self._inverse.apply_direction(directions))
        return sigma / self.transform.scale, rgb


def field_in_frame(field: RadianceField, t: Sim3Transform) -> RadianceField:
    """Express ``field`` in the frame reached by ``t`` (``p_new = t p_field``)."""
    return TransformedField(field, t)


# ---------------------------------------------------------------------------
# Ray-sample proposal


@dataclass
class SampleBatch:
    """Fixed-size interval sets for a batch of rays; intervals partition [near, far].

    ``t``/``delta``/``sigma`` have shape (R, K) and ``rgb`` (R, K, 3).
    Zero-width intervals may appear; they carry no opacity.
    """

    t: np.ndarray
    delta: np.ndarray
    sigma: np.ndarray
    rgb: np.ndarray

    @property
    def edges(self) -> np.ndarray:
        return np.concatenate([self.t, self.t[:, -1:] + self.delta[:, -1:]], axis=1)

    @property
    def mid(self) -> np.ndarray:
        return self.t + 0.5 * self.delta

    def ray(self, i: int) -> list[RaySample]:
        return [
            RaySample(float(t), float(d), float(s), tuple(float(c) for c in rgb))
            for t, d, s, rgb in zip(self.t[i], self.delta[i], self.sigma[i], self.rgb[i])
            if d > 0
        ]


def _inverse_cdf(edges: np.ndarray, weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Draw positions from the piecewise-constant pdf ``weights`` over bins ``edges``."""
    cdf = np.cumsum(weights, axis=1)
    cdf = cdf / cdf[:, -1:]
    cdf = np.concatenate([np.zeros((cdf.shape[0], 1)), cdf], axis=1)
    idx = np.sum(u[:, :, None] >= cdf[:, None, 1:-1], axis=-1)
    lo_c = np.take_along_axis(cdf, idx, axis=1)
    hi_c = np.take_along_axis(cdf, idx + 1, axis=1)
    lo_e = np.take_along_axis(edges, idx, axis=1)
    hi_e = np.take_along_axis(edges, idx + 1, axis=1)
    span = hi_c - lo_c
    frac = np.divide(u - lo_c, span, out=np.full_like(u, 0.5), where=span > 0)
    return lo_e + np.clip(frac, 0.0, 1.0) * (hi_e - lo_e)


def propose_batch(
    field: RadianceField,
    origins: np.ndarray,
    directions: np.ndarray,
    near: float,
    far: float,
    budget: int,
    jitter: np.ndarray | None = None,
) -> SampleBatch:
    """Two-pass proposal: stratified coarse bins, then inverse-CDF breakpoints.

    ``jitter`` holds uniforms of shape (R, budget); ``None`` uses bin centers.
    The coarse bin edges and the importance breakpoints together cut [near, far]
    into exactly ``budget`` intervals, each evaluated at its midpoint.
    """
    if budget < 2:
        raise ValueError("budget must be at least 2")
    if not near < far:
        raise ValueError("near must be smaller than far")
    origins = np.asarray(origins, dtype=float)
    directions = np.asarray(directions, dtype=float)
    n_rays = origins.shape[0]
    n_coarse = budget // 2
    n_fine = budget - n_coarse
    if jitter is None:
        jitter = np.full((n_rays, budget), 0.5)

    frac = np.linspace(0.0, 1.0, n_coarse + 1)
    edges = np.broadcast_to(near + (far - near) * frac, (n_rays, n_coarse + 1))
    width = (far - near) / n_coarse
    t_coarse = edges[:, :-1] + jitter[:, :n_coarse] * width
    pts = origins[:, None, :] + t_coarse[..., None] * directions[:, None, :]
    sigma_c, _ = field.query(pts, directions[:, None, :])
    alpha = 1.0 - np.exp(-sigma_c * width)
    trans = np.cumprod(np.concatenate([np.ones((n_rays, 1)), 1.0 - alpha[:, :-1]], axis=1), axis=1)
    weights = trans * alpha
    # keep a floor so empty rays fall back to uniform breakpoints
    weights = weights + 1e-5 * (weights.sum(axis=1, keepdims=True) + 1e-12)

    u = (np.arange(n_fine)[None, :] + jitter[:, n_coarse:]) / n_fine
    fine = _inverse_cdf(edges, weights, u)
    breaks = np.sort(np.concatenate([edges, fine], axis=1), axis=1)
    t = breaks[:, :-1]
    delta = np.diff(breaks, axis=1)
    mid = t + 0.5 * delta
    pts = origins[:, None, :] + mid[..., None] * directions[:, None, :]
    sigma, rgb = field.query(pts, directions[:, None, :])
    sigma = np.where(delta > 0, sigma, 0.0)
    return SampleBatch(t, delta, sigma, rgb)


def check_direction(direction) -> np.ndarray:
    d = np.asarray(direction, dtype=float).reshape(3)
    if abs(np.linalg.norm(d) - 1.0) > DIRECTION_TOL:
        raise ValueError(f"ray direction must be unit length, got norm {np.linalg.norm(d)}")
    return d


def propose_samples(
    field: RadianceField,
    origin,
    direction,
    near: float,
    far: float,
    budget: int,
    seed: int | None = None,
) -> list[RaySample]:
    """Sorted, non-overlapping samples covering [near, far] for one ray."""
    d = check_direction(direction)
    o = np.asarray(origin, dtype=float).reshape(1, 3)
    jitter = None if seed is None else counter_uniforms(seed, 0, [0], budget)
    return propose_batch(field, o, d[None], near, far, budget, jitter).ray(0)
