"""Novel-view synthesis from several registered fields.

A distance test on the query camera decides whether to blend at all. Blending
then happens per image (``idw-2d``), per pixel using each field's expected depth
(``idw-3d``), or per ray sample (``idw-sample``). For the last one, the
per-field interval sets along a ray are cut at the union of their endpoints,
each field's termination mass is spread uniformly over its intervals, and every
merged interval is weighted by inverse distance from its midpoint to each field
origin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .fields import RadianceField, field_in_frame
from .geometry import Sim3Transform
from .renderer import (
    DEFAULT_CHUNK,
    Camera,
    RenderOutput,
    composite_arrays,
    map_chunks,
    ray_ids,
    render,
    sample_rays,
)

STRATEGIES = ("nearest", "idw-2d", "idw-3d", "idw-sample")
INDOOR_PRESET = {"tau": 1.8, "gamma": 5.0}
OUTDOOR_PRESET = {"tau": 1.2, "gamma": 10.0}


@dataclass
class BlendConfig:
    strategy: str = "idw-sample"
    gamma: float = 5.0
    tau: float = 1.8
    budget: int = 64
    eps_mass: float = 1e-4
    seed: int | None = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if not self.gamma >= 0:
            raise ValueError("gamma must be non-negative")
        if self.tau < 1:
            raise ValueError("tau must be at least 1")
        if self.budget < 2:
            raise ValueError("budget must be at least 2")
        if self.eps_mass <= 0:
            raise ValueError("eps_mass must be positive")


@dataclass
class RegisteredField:
    name: str
    field: RadianceField  # in its own local frame
    transform: Sim3Transform = field(default_factory=Sim3Transform)  # local -> reference

    @property
    def origin(self) -> np.ndarray:
        return self.transform.apply(self.field.origin)

    @property
    def framed(self) -> RadianceField:
        """The field queried in reference-frame coordinates."""
        if self.transform.allclose(Sim3Transform(), atol=0.0):
            return self.field
        return field_in_frame(self.field, self.transform)


class RegisteredFieldSet:
    """Reference field first (identity transform), then the others mapped into it."""

    def __init__(self, reference: RadianceField, others: Sequence[tuple[RadianceField, Sim3Transform]] = (), names=None):
        names = list(names) if names is not None else ["A"] + [chr(ord("B") + i) for i in range(len(others))]
        self.members = [RegisteredField(names[0], reference)]
        for (f, t), n in zip(others, names[1:]):
            self.members.append(RegisteredField(n, f, t))
        self._framed = [m.framed for m in self.members]
        self.origins = np.array([m.origin for m in self.members])
        if not np.all(np.isfinite(self.origins)):
            raise ValueError("field origins must be finite")

    def __len__(self):
        return len(self.members)

    def framed(self, i: int) -> RadianceField:
        return self._framed[i]


# ---------------------------------------------------------------------------
# weights and the distance test


@dataclass(frozen=True)
class DistanceDecision:
    blend: bool
    nearest: int
    members: tuple[int, ...]
    value: float


def distance_test(camera_center, origins, tau: float) -> DistanceDecision:
    """Blend when the two nearest origins are within a distance ratio of ``tau``.

    With more than two fields every field within ``tau`` times the nearest
    distance takes part.
    """
    origins = np.asarray(origins, dtype=float).reshape(-1, 3)
    d = np.linalg.norm(origins - np.asarray(camera_center, dtype=float), axis=1)
    nearest = int(np.argmin(d))
    if len(d) < 2:
        return DistanceDecision(False, nearest, (nearest,), 1.0)
    if d[nearest] < 1e-12:
        return DistanceDecision(False, nearest, (nearest,), math.inf)
    second = np.partition(d, 1)[1]
    value = float(second / d[nearest])
    if value > tau:
        return DistanceDecision(False, nearest, (nearest,), value)
    members = tuple(int(i) for i in np.flatnonzero(d / d[nearest] <= tau))
    return DistanceDecision(True, nearest, members, value)


def idw_weight_array(distances: np.ndarray, gamma: float) -> np.ndarray:
    """Normalized ``d^-gamma`` weights along the last axis.

    A zero distance takes all the weight (lowest index first); ``gamma=inf``
    gives the hard nearest assignment.
    """
    d = np.asarray(distances, dtype=float)
    zero = d <= 0
    if math.isinf(gamma):
        idx = np.argmin(d, axis=-1)
        return (np.arange(d.shape[-1]) == idx[..., None]).astype(float)
    with np.errstate(divide="ignore"):
        logd = np.log(np.where(zero, 1.0, d))
    # relative to the nearest element so the largest weight is exactly 1 before normalizing
    expo = -gamma * (logd - logd.min(axis=-1, keepdims=True))
    w = np.exp(expo)
    w = w / w.sum(axis=-1, keepdims=True)
    if zero.any():
        has_zero = zero.any(axis=-1)
        first = np.argmax(zero, axis=-1)
        onehot = (np.arange(d.shape[-1]) == first[..., None]).astype(float)
        w = np.where(has_zero[..., None], onehot, w)
    return w


def idw_weights(distances: Sequence[float], gamma: float) -> np.ndarray:
    return idw_weight_array(np.asarray(distances, dtype=float), gamma)


# ---------------------------------------------------------------------------
# sample merging


@dataclass
class IntervalSet:
    """A field's samples along one ray: start, length, termination probability, color."""

    t: np.ndarray
    delta: np.ndarray
    p: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.delta = np.asarray(self.delta, dtype=float).reshape(-1)
        self.p = np.asarray(self.p, dtype=float).reshape(-1)
        self.c = np.asarray(self.c, dtype=float).reshape(-1, 3)
        if np.any(self.delta <= 0):
            raise ValueError("interval lengths must be positive")
        if np.any(self.t[:-1] + self.delta[:-1] > self.t[1:] + 1e-12):
            raise ValueError("intervals must be sorted and non-overlapping")

    @property
    def end(self) -> np.ndarray:
        return self.t + self.delta


@dataclass
class MergedSampleSet:
    t: np.ndarray  # (M,)
    delta: np.ndarray  # (M,)
    p: np.ndarray  # (M, n_fields)
    c: np.ndarray  # (M, n_fields, 3)
    source: np.ndarray  # (M, n_fields) covering input index, -1 when uncovered

    @property
    def mid(self) -> np.ndarray:
        return self.t + 0.5 * self.delta


def merge_ray_samples(sets: Sequence[IntervalSet]) -> MergedSampleSet:
    """Common refinement of several interval sets along one ray.

    Each input interval's mass is split in proportion to overlap length; merged
    intervals covered by no input are dropped.
    """
    n = len(sets)
    points = np.unique(np.concatenate([np.concatenate([s.t, s.end]) for s in sets] or [np.zeros(0)]))
    lo, hi = points[:-1], points[1:]
    mid = 0.5 * (lo + hi)
    src = np.full((len(lo), n), -1, dtype=int)
    for i, s in enumerate(sets):
        j = np.searchsorted(s.t, mid, side="right") - 1
        ok = (j >= 0) & (mid < s.end[np.clip(j, 0, None)]) if len(s.t) else np.zeros(len(mid), bool)
        src[:, i] = np.where(ok, j, -1)
    keep = (src >= 0).any(axis=1)
    lo, hi, src = lo[keep], hi[keep], src[keep]
    delta = hi - lo
    p = np.zeros((len(lo), n))
    c = np.zeros((len(lo), n, 3))
    for i, s in enumerate(sets):
        j = src[:, i]
        ok = j >= 0
        p[ok, i] = s.p[j[ok]] * (delta[ok] / s.delta[j[ok]])
        c[ok, i] = s.c[j[ok]]
    return MergedSampleSet(lo, delta, p, c, src)


@dataclass
class IdwSampleResult:
    color: np.ndarray
    accumulation: np.ndarray
    depth: np.ndarray
    weights: np.ndarray  # per-interval weights after the per-sample normalization
    scale: np.ndarray  # global rescale per ray (0 for empty rays)
    mass: np.ndarray  # total weighted mass before the rescale


def idw_sample_composite(t, delta, p, c, origins, ray_o, ray_d, gamma, eps_mass, far=np.inf) -> IdwSampleResult:
    """Sample-wise IDW over merged intervals; arrays carry leading ray axes.

    ``t``/``delta``: (..., M); ``p``: (..., M, n); ``c``: (..., M, n, 3);
    ``ray_o``/``ray_d``: (..., 3); ``origins``: (n, 3).
    """
    mid = t + 0.5 * delta
    pts = ray_o[..., None, :] + mid[..., None] * ray_d[..., None, :]
    dist = np.linalg.norm(pts[..., None, :] - origins, axis=-1)
    w = idw_weight_array(dist, gamma)
    wp = w * p
    mass = wp.sum(axis=(-1, -2))
    ok = mass >= eps_mass
    scale = np.where(ok, 1.0 / np.where(ok, mass, 1.0), 0.0)
    num = np.einsum("...mn,...mnc->...c", wp, c)
    color = num * scale[..., None]
    depth = np.where(ok, np.sum(wp.sum(axis=-1) * mid, axis=-1) * scale, far)
    return IdwSampleResult(color, ok.astype(float), depth, w, scale, mass)


def blend_pixel_idw_sample(merged: MergedSampleSet, origins, ray_o, ray_d, gamma: float, eps_mass: float = 1e-4):
    """Blended RGB and accumulation (0 or 1) for one ray."""
    res = idw_sample_composite(
        merged.t, merged.delta, merged.p, merged.c, np.asarray(origins, dtype=float),
        np.asarray(ray_o, dtype=float), np.asarray(ray_d, dtype=float), gamma, eps_mass,
    )
    return res.color, float(res.accumulation)


def merge_batch(edges: Sequence[np.ndarray], p: Sequence[np.ndarray], c: Sequence[np.ndarray]):
    """Merge per-field partitions of the same [near, far] for a batch of rays.

    ``edges[i]`` is (R, K_i + 1); returns breakpoint starts ``t`` (R, M), lengths
    (R, M), redistributed mass (R, M, n) and colors (R, M, n, 3). Shared
    endpoints produce zero-length intervals with zero mass.
    """
    n = len(edges)
    allb = np.concatenate(edges, axis=1)
    labels = np.concatenate([np.full(e.shape[1], i) for i, e in enumerate(edges)])
    order = np.argsort(allb, axis=1, kind="stable")
    b = np.take_along_axis(allb, order, axis=1)
    lab = labels[order]
    t = b[:, :-1]
    delta = b[:, 1:] - b[:, :-1]
    rows = np.arange(b.shape[0])[:, None]
    pm = np.zeros(t.shape + (n,))
    cm = np.zeros(t.shape + (n, 3))
    for i in range(n):
        k = edges[i].shape[1] - 1
        idx = np.clip(np.cumsum(lab == i, axis=1)[:, :-1] - 1, 0, k - 1)
        di = np.diff(edges[i], axis=1)[rows, idx]
        frac = np.divide(delta, di, out=np.zeros_like(delta), where=di > 0)
        pm[..., i] = p[i][rows, idx] * frac
        cm[..., i, :] = c[i][rows, idx]
    return t, delta, pm, cm


# ---------------------------------------------------------------------------
# rendering


@dataclass
class BlendOutput(RenderOutput):
    decision: DistanceDecision | None = None
    per_field: dict[int, RenderOutput] = field(default_factory=dict)


def _weighted(outputs: Sequence[RenderOutput], w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Combine renders with weights broadcast as (n,) or (n, H, W)."""
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        w = w[:, None, None]
    color = sum(w[i][..., None] * o.color for i, o in enumerate(outputs))
    acc = sum(w[i] * o.accumulation for i, o in enumerate(outputs))
    depth = sum(w[i] * o.depth for i, o in enumerate(outputs))
    return color, acc, depth


def _merged_rays(fields: RegisteredFieldSet, members: Sequence[int], camera: Camera, cfg: BlendConfig,
                 sl: slice | None = None):
    origins, dirs = camera.rays()
    ids = ray_ids(camera)
    if sl is not None:
        origins, dirs, ids = origins[sl], dirs[sl], ids[sl]
    edges, ps, cs = [], [], []
    for i in members:
        batch = sample_rays(fields.framed(i), origins, dirs, ids, camera.near, camera.far, cfg.budget, cfg.seed)
        comp = composite_arrays(batch.sigma, batch.delta, batch.mid, batch.rgb, camera.far)
        edges.append(batch.edges)
        ps.append(comp.weights)
        cs.append(batch.rgb)
    return merge_batch(edges, ps, cs), origins, dirs


def idw_sample_rays(fields: RegisteredFieldSet, members: Sequence[int], camera: Camera, cfg: BlendConfig,
                    sl: slice | None = None) -> IdwSampleResult:
    """IDW-Sample for the camera rays in ``sl`` (all rays by default)."""
    (t, delta, pm, cm), origins, dirs = _merged_rays(fields, members, camera, cfg, sl)
    return idw_sample_composite(t, delta, pm, cm, fields.origins[list(members)], origins, dirs,
                                cfg.gamma, cfg.eps_mass, camera.far)


def _idw3d_distances(camera: Camera, outs: Sequence[RenderOutput], origins: np.ndarray) -> np.ndarray:
    """(H, W, n) distances from each field's expected-depth point to its origin."""
    _, dirs = camera.rays()
    dirs = dirs.reshape(camera.height, camera.width, 3)
    dist = []
    for o, x in zip(outs, origins):
        pts = camera.center + o.depth[..., None] * dirs
        dist.append(np.linalg.norm(pts - x, axis=-1))
    return np.stack(dist, axis=-1)


def _image_blend(strategy: str, camera: Camera, outs, origins, gamma: float):
    if strategy == "idw-2d":
        d = np.linalg.norm(origins - camera.center, axis=1)
        wts = idw_weight_array(d, gamma)
    else:  # idw-3d
        wts = np.moveaxis(idw_weight_array(_idw3d_distances(camera, outs, origins), gamma), -1, 0)
    color, acc, depth = _weighted(outs, wts)
    return np.clip(color, 0.0, 1.0), np.clip(acc, 0.0, 1.0), depth


def _stack_rays(parts, h: int, w: int):
    color = np.concatenate([p.color for p in parts]).reshape(h, w, 3)
    acc = np.concatenate([p.accumulation for p in parts]).reshape(h, w)
    depth = np.concatenate([p.depth for p in parts]).reshape(h, w)
    return np.clip(color, 0.0, 1.0), acc, depth


def blend_sweep(fields: RegisteredFieldSet, camera: Camera, cfg: BlendConfig, gammas: Sequence[float],
                chunk: int = DEFAULT_CHUNK, workers: int | None = None) -> list[BlendOutput]:
    """``blend_render`` for every gamma in ``gammas``, sharing the per-field work.

    Each output equals ``blend_render`` with ``cfg.gamma`` replaced by that gamma.
    """
    gammas = [float(g) for g in gammas]
    for g in gammas:
        if not g >= 0:
            raise ValueError("gamma must be non-negative")
    h, w = camera.height, camera.width
    if len(fields) == 1 or cfg.strategy == "nearest":
        out = blend_render(fields, camera, cfg, chunk, workers)
        return [out for _ in gammas]
    decision = distance_test(camera.center, fields.origins, cfg.tau)
    if not decision.blend:
        out = blend_render(fields, camera, cfg, chunk, workers)
        return [out for _ in gammas]
    members = list(decision.members)
    origins = fields.origins[members]

    if cfg.strategy == "idw-sample":
        def work(sl):
            (t, delta, pm, cm), o, d = _merged_rays(fields, members, camera, cfg, sl)
            return [idw_sample_composite(t, delta, pm, cm, origins, o, d, g, cfg.eps_mass, camera.far) for g in gammas]

        parts = map_chunks(work, h * w, chunk, workers)
        return [BlendOutput(*_stack_rays([p[k] for p in parts], h, w), decision) for k in range(len(gammas))]

    renders = {i: render(fields.framed(i), camera, cfg.budget, seed=cfg.seed, chunk=chunk, workers=workers)
               for i in members}
    outs = [renders[i] for i in members]
    return [BlendOutput(*_image_blend(cfg.strategy, camera, outs, origins, g), decision, renders) for g in gammas]


def blend_render(fields: RegisteredFieldSet, camera: Camera, cfg: BlendConfig,
                 chunk: int = DEFAULT_CHUNK, workers: int | None = None) -> BlendOutput:
    h, w = camera.height, camera.width

    def single(i: int) -> RenderOutput:
        return render(fields.framed(i), camera, cfg.budget, seed=cfg.seed, chunk=chunk, workers=workers)

    if len(fields) == 1:
        out = single(0)
        return BlendOutput(out.color, out.accumulation, out.depth, None, {0: out})

    decision = distance_test(camera.center, fields.origins, cfg.tau)
    if cfg.strategy == "nearest" or not decision.blend:
        out = single(decision.nearest)
        return BlendOutput(out.color, out.accumulation, out.depth, decision, {decision.nearest: out})

    members = list(decision.members)
    origins = fields.origins[members]

    if cfg.strategy == "idw-sample":
        def work(sl):
            return idw_sample_rays(fields, members, camera, cfg, sl)

        parts = map_chunks(work, h * w, chunk, workers)
        return BlendOutput(*_stack_rays(parts, h, w), decision)

    renders = {i: single(i) for i in members}
    outs = [renders[i] for i in members]
    return BlendOutput(*_image_blend(cfg.strategy, camera, outs, origins, cfg.gamma), decision, renders)
