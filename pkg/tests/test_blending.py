import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fieldfusion.blending import (
    BlendConfig,
    IntervalSet,
    RegisteredFieldSet,
    blend_pixel_idw_sample,
    blend_render,
    blend_sweep,
    distance_test,
    idw_sample_rays,
    idw_weights,
    merge_batch,
    merge_ray_samples,
)
from fieldfusion.fields import CompositeField, UniformSphereField
from fieldfusion.geometry import Se3Pose, Sim3Transform, random_sim3
from fieldfusion.fields import field_in_frame
from fieldfusion.renderer import Camera, composite_arrays, render

LEFT = UniformSphereField([-3.0, 0.0, 0.0], 1.0, 20.0, [0.9, 0.2, 0.1])
RIGHT = UniformSphereField([3.0, 0.0, 0.0], 1.0, 20.0, [0.1, 0.3, 0.9])
LEFT_DIM = UniformSphereField([-3.0, 0.0, 0.0], 1.1, 5.0, [0.5, 0.5, 0.1])
RIGHT_DIM = UniformSphereField([3.0, 0.0, 0.0], 1.1, 5.0, [0.1, 0.5, 0.5])
FIELD_A = CompositeField([LEFT, RIGHT_DIM], origin=[-3.0, 0.0, 0.0])
FIELD_B = CompositeField([RIGHT, LEFT_DIM], origin=[3.0, 0.0, 0.0])
CAM = Camera.from_fov(Se3Pose.look_at([0.0, -8.0, 1.0], [0.0, 0.0, 0.0]), 24, 16, 60.0, 1.0, 14.0)


def two_fields():
    return RegisteredFieldSet(FIELD_A, [(FIELD_B, Sim3Transform())])


def random_interval_set(rng, lo=0.0, hi=10.0):
    k = int(rng.integers(1, 12))
    edges = np.sort(rng.uniform(lo, hi, k + 1))
    edges = edges[np.concatenate([[True], np.diff(edges) > 1e-9])]
    if len(edges) < 2:
        edges = np.array([lo, hi])
    d = np.diff(edges)
    return IntervalSet(edges[:-1], d, rng.uniform(0, 0.3, len(d)), rng.uniform(size=(len(d), 3)))


# -- distance test and weights ----------------------------------------------------


def test_distance_test_examples():
    origins = [[-1, 0, 0], [1, 0, 0]]
    d = distance_test([0, 5, 0], origins, 1.8)
    assert d.blend and d.members == (0, 1) and d.value == pytest.approx(1.0)
    far = distance_test([-0.9, 0, 0], origins, 1.8)
    assert not far.blend and far.nearest == 0 and far.members == (0,)
    assert far.value == pytest.approx(1.9 / 0.1)
    edge = distance_test([-2, 0, 0], origins, 3.0)
    assert edge.blend and edge.value == pytest.approx(3.0)
    assert not distance_test([0, 0, 0], [[1, 0, 0]], 1.8).blend
    assert not distance_test([1, 0, 0], origins, 1.8).blend


def test_distance_test_three_fields():
    d = distance_test([0, 0, 0], [[1, 0, 0], [0, 1.5, 0], [0, 0, 5]], 1.8)
    assert d.blend and d.members == (0, 1)


def test_idw_weight_examples():
    np.testing.assert_allclose(idw_weights([1.0, 2.0], 1.0), [2 / 3, 1 / 3])
    np.testing.assert_allclose(idw_weights([1.0, 2.0], 2.0), [0.8, 0.2])
    np.testing.assert_allclose(idw_weights([1.0, 7.0, 3.0], 0.0), [1 / 3] * 3)
    np.testing.assert_array_equal(idw_weights([2.0, 0.0, 0.0], 3.0), [0.0, 1.0, 0.0])
    np.testing.assert_array_equal(idw_weights([2.0, 1.0], math.inf), [0.0, 1.0])


@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=6), st.floats(0, 1000))
def test_idw_weights_normalized(d, gamma):
    w = idw_weights(d, gamma)
    assert np.all(w >= 0)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert w[int(np.argmin(d))] == w.max()


def test_config_validation():
    with pytest.raises(ValueError):
        BlendConfig(strategy="bogus")
    with pytest.raises(ValueError):
        BlendConfig(gamma=-1)
    with pytest.raises(ValueError):
        BlendConfig(tau=0.5)


# -- merging ------------------------------------------------------------------------


def test_merge_overlap_example():
    a = IntervalSet([0.0], [2.0], [0.4], [[1, 0, 0]])
    b = IntervalSet([1.0], [2.0], [0.6], [[0, 0, 1]])
    m = merge_ray_samples([a, b])
    np.testing.assert_allclose(m.t, [0, 1, 2])
    np.testing.assert_allclose(m.delta, [1, 1, 1])
    np.testing.assert_allclose(m.p, [[0.2, 0.0], [0.2, 0.3], [0.0, 0.3]])
    np.testing.assert_array_equal(m.source, [[0, -1], [0, 0], [-1, 0]])
    np.testing.assert_array_equal(m.c[1], [[1, 0, 0], [0, 0, 1]])


def test_merge_drops_gaps():
    a = IntervalSet([0.0], [1.0], [0.5], [[1, 1, 1]])
    b = IntervalSet([2.0], [1.0], [0.5], [[1, 1, 1]])
    m = merge_ray_samples([a, b])
    np.testing.assert_allclose(m.t, [0, 2])


def test_interval_set_validation():
    with pytest.raises(ValueError):
        IntervalSet([0.0, 0.5], [1.0, 1.0], [0.1, 0.1], np.zeros((2, 3)))
    with pytest.raises(ValueError):
        IntervalSet([0.0], [0.0], [0.1], np.zeros((1, 3)))


@given(st.integers(0, 2**31))
def test_merge_conserves_mass(seed):
    rng = np.random.default_rng(seed)
    sets = [random_interval_set(rng) for _ in range(int(rng.integers(2, 4)))]
    m = merge_ray_samples(sets)
    for i, s in enumerate(sets):
        assert abs(m.p[:, i].sum() - s.p.sum()) <= 1e-12
    assert np.all(m.delta > 0)
    assert np.all(m.t[1:] >= m.t[:-1] + m.delta[:-1] - 1e-12)


def test_merge_batch_matches_single_ray(rng):
    for _ in range(50):
        e1 = np.concatenate([[1.0], np.sort(rng.uniform(1, 5, 6)), [5.0]])
        e2 = np.concatenate([[1.0], np.sort(rng.uniform(1, 5, 4)), [5.0]])
        p1, p2 = rng.uniform(0, 0.2, 7), rng.uniform(0, 0.2, 5)
        c1, c2 = rng.uniform(size=(7, 3)), rng.uniform(size=(5, 3))
        t, delta, pm, cm = merge_batch([e1[None], e2[None]], [p1[None], p2[None]], [c1[None], c2[None]])
        keep = delta[0] > 0
        ref = merge_ray_samples([IntervalSet(e1[:-1], np.diff(e1), p1, c1), IntervalSet(e2[:-1], np.diff(e2), p2, c2)])
        np.testing.assert_allclose(t[0][keep], ref.t)
        np.testing.assert_allclose(pm[0][keep], ref.p, atol=1e-15)
        np.testing.assert_array_equal(pm[0][~keep], 0.0)


# -- sample-wise IDW ----------------------------------------------------------------


def test_idw_sample_hand_oracle():
    # ray along +x from the origin; field origins at x=0 and x=4
    a = IntervalSet([0.0], [2.0], [0.4], [[1, 0, 0]])
    b = IntervalSet([1.0], [2.0], [0.6], [[0, 0, 1]])
    m = merge_ray_samples([a, b])
    color, acc = blend_pixel_idw_sample(m, [[0, 0, 0], [4, 0, 0]], [0, 0, 0], [1, 0, 0], gamma=1.0)
    # midpoints 0.5, 1.5, 2.5 -> distances (0.5, 3.5), (1.5, 2.5), (2.5, 1.5)
    w = [np.array([3.5, 0.5]) / 4, np.array([2.5, 1.5]) / 4, np.array([1.5, 2.5]) / 4]
    wp = np.array([w[0] * [0.2, 0], w[1] * [0.2, 0.3], w[2] * [0, 0.3]])
    red, blue = wp[:, 0].sum(), wp[:, 1].sum()
    np.testing.assert_allclose(color, np.array([red, 0, blue]) / (red + blue), atol=1e-15)
    assert acc == 1.0


def test_idw_sample_empty_mass_is_black():
    a = IntervalSet([0.0], [1.0], [1e-6], [[1, 1, 1]])
    b = IntervalSet([0.0], [1.0], [2e-6], [[1, 1, 1]])
    color, acc = blend_pixel_idw_sample(merge_ray_samples([a, b]), [[0, 0, 0], [1, 0, 0]], [0, 0, 0], [0, 1, 0], 5.0)
    np.testing.assert_array_equal(color, 0.0)
    assert acc == 0.0


def test_idw_sample_rescales_to_unit_mass():
    res = idw_sample_rays(two_fields(), [0, 1], CAM, BlendConfig())
    ok = res.mass >= 1e-4
    assert ok.any() and (~ok).any()
    np.testing.assert_allclose((res.mass * res.scale)[ok], 1.0, atol=1e-12)
    assert np.all(res.scale[~ok] == 0)


# -- full blends --------------------------------------------------------------------


def test_single_field_matches_render():
    out = blend_render(RegisteredFieldSet(FIELD_A), CAM, BlendConfig(budget=16))
    ref = render(FIELD_A, CAM, 16, seed=0)
    np.testing.assert_array_equal(out.color, ref.color)
    np.testing.assert_array_equal(out.depth, ref.depth)


def test_nearest_strategy_uses_closest_field():
    cam = Camera.from_fov(Se3Pose.look_at([-2.0, -8.0, 1.0], [0.0, 0.0, 0.0]), 12, 8, 60.0, 1.0, 14.0)
    out = blend_render(two_fields(), cam, BlendConfig(strategy="nearest", budget=16))
    np.testing.assert_array_equal(out.color, render(FIELD_A, cam, 16, seed=0).color)
    assert out.decision.nearest == 0


def test_far_camera_skips_blending():
    cam = Camera.from_fov(Se3Pose.look_at([4.0, -2.0, 0.0], [3.0, 0.0, 0.0]), 12, 8, 60.0, 0.5, 14.0)
    out = blend_render(two_fields(), cam, BlendConfig(budget=16))
    assert not out.decision.blend
    np.testing.assert_array_equal(out.color, render(FIELD_B, cam, 16, seed=0).color)


def test_gamma_zero_idw2d_is_mean_image():
    cfg = BlendConfig(strategy="idw-2d", gamma=0.0, budget=16)
    out = blend_render(two_fields(), CAM, cfg)
    mean = 0.5 * (render(FIELD_A, CAM, 16, seed=0).color + render(FIELD_B, CAM, 16, seed=0).color)
    np.testing.assert_allclose(out.color, mean, atol=1e-9)


def test_large_gamma_is_hard_assignment():
    fs = two_fields()
    hard = blend_render(fs, CAM, BlendConfig(gamma=math.inf, budget=16))
    soft = blend_render(fs, CAM, BlendConfig(gamma=500.0, budget=16))
    np.testing.assert_array_equal(soft.color, hard.color)


@pytest.mark.parametrize("strategy", ["nearest", "idw-2d", "idw-3d", "idw-sample"])
def test_identical_colocated_fields(strategy):
    fs = RegisteredFieldSet(FIELD_A, [(FIELD_A, Sim3Transform())])
    cfg = BlendConfig(strategy=strategy, budget=16)
    out = blend_render(fs, CAM, cfg)
    ref = render(FIELD_A, CAM, 16, seed=0)
    if strategy != "idw-sample":
        np.testing.assert_allclose(out.color, ref.color, atol=1e-6)
        return
    # the global rescale lifts every ray with enough mass to unit accumulation
    ok = ref.accumulation >= cfg.eps_mass
    np.testing.assert_allclose(out.color[ok], ref.color[ok] / ref.accumulation[ok, None], atol=1e-6)
    np.testing.assert_array_equal(out.color[~ok], 0.0)


def test_merge_identical_sets_is_identity(rng):
    a = random_interval_set(rng)
    m = merge_ray_samples([a, a])
    np.testing.assert_array_equal(m.t, a.t)
    np.testing.assert_allclose(m.delta, a.delta, rtol=1e-15)
    np.testing.assert_allclose(m.p, np.stack([a.p, a.p], axis=1), rtol=1e-14)


def test_merge_disjoint_sets():
    m = merge_ray_samples([IntervalSet([0.0], [1.0], [0.3], [[1, 0, 0]]), IntervalSet([2.0], [1.0], [0.4], [[0, 1, 0]])])
    np.testing.assert_allclose(m.p, [[0.3, 0.0], [0.0, 0.4]])
    np.testing.assert_array_equal(m.c[0, 1], 0.0)


def test_transformed_copy_blends_like_the_original():
    # B holds the same content in a scaled, rotated frame; mapping it back must reproduce A's samples
    t = random_sim3(np.random.default_rng(2), (0.5, 2.0))
    fs = RegisteredFieldSet(FIELD_A, [(field_in_frame(FIELD_A, t.inverse()), t)])
    np.testing.assert_allclose(fs.origins[1], fs.origins[0], atol=1e-12)
    single = blend_render(RegisteredFieldSet(FIELD_A), CAM, BlendConfig(budget=16))
    out = blend_render(fs, CAM, BlendConfig(strategy="idw-2d", budget=16, tau=1.8))
    np.testing.assert_allclose(out.color, single.color, atol=1e-6)


@pytest.mark.parametrize("strategy", ["nearest", "idw-2d", "idw-3d", "idw-sample"])
def test_sweep_matches_individual_renders(strategy):
    fs = two_fields()
    gammas = [0.5, 5.0, math.inf]
    cfg = BlendConfig(strategy=strategy, budget=16)
    sweep = blend_sweep(fs, CAM, cfg, gammas)
    for g, out in zip(gammas, sweep):
        ref = blend_render(fs, CAM, BlendConfig(strategy=strategy, gamma=g, budget=16))
        np.testing.assert_array_equal(out.color, ref.color)


def test_workers_do_not_change_blend():
    fs = two_fields()
    a = blend_render(fs, CAM, BlendConfig(budget=16))
    b = blend_render(fs, CAM, BlendConfig(budget=16), chunk=50, workers=3)
    np.testing.assert_array_equal(a.color, b.color)


# -- sample-split invariance --------------------------------------------------------


def _volumetric_set(edges, sigma, rgb):
    comp = composite_arrays(sigma, np.diff(edges), 0.5 * (edges[:-1] + edges[1:]), rgb, np.inf)
    return IntervalSet(edges[:-1], np.diff(edges), comp.weights, rgb)


def _split_case(rng):
    ea = np.sort(np.concatenate([[0.0, 6.0], rng.uniform(0, 6, 5)]))
    eb = np.sort(np.concatenate([[0.0, 6.0], rng.uniform(0, 6, 4)]))
    sa, sb = rng.exponential(0.8, len(ea) - 1), rng.exponential(0.8, len(eb) - 1)
    ca, cb = rng.uniform(size=(len(ea) - 1, 3)), rng.uniform(size=(len(eb) - 1, 3))
    k = int(rng.integers(len(ea) - 1))
    cut = ea[k] + rng.uniform(0.2, 0.8) * (ea[k + 1] - ea[k])
    ea2 = np.sort(np.append(ea, cut))
    sa2, ca2 = np.insert(sa, k, sa[k]), np.insert(ca, k, ca[k], axis=0)
    a, a2, b = _volumetric_set(ea, sa, ca), _volumetric_set(ea2, sa2, ca2), _volumetric_set(eb, sb, cb)
    return a, a2, b


def _blend_change(rng, gamma):
    a, a2, b = _split_case(rng)
    origins = [[0.5, 0.0, 0.0], [5.5, 0.0, 0.0]]
    c1, _ = blend_pixel_idw_sample(merge_ray_samples([a, b]), origins, [0, 0, 0], [1, 0, 0], gamma)
    c2, _ = blend_pixel_idw_sample(merge_ray_samples([a2, b]), origins, [0, 0, 0], [1, 0, 0], gamma)
    return float(np.abs(c1 - c2).max())


def test_split_invariance_with_constant_weights(rng):
    assert max(_blend_change(rng, 0.0) for _ in range(500)) < 1e-9


def test_split_invariance_single_field(rng):
    for _ in range(200):
        a, a2, _ = _split_case(rng)
        c1, _ = blend_pixel_idw_sample(merge_ray_samples([a]), [[0.5, 0, 0]], [0, 0, 0], [1, 0, 0], 5.0)
        c2, _ = blend_pixel_idw_sample(merge_ray_samples([a2]), [[0.5, 0, 0]], [0, 0, 0], [1, 0, 0], 5.0)
        np.testing.assert_allclose(c2, c1, atol=1e-9)


@pytest.mark.xfail(strict=True, reason="uniform mass redistribution makes the blend depend on where a field cuts its intervals once weights vary along the ray")
def test_split_invariance_general(rng):
    assert max(_blend_change(rng, 5.0) for _ in range(500)) < 1e-6
