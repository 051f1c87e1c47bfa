import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fieldfusion.fields import RaySample, UniformBoxField, UniformSphereField
from fieldfusion.geometry import Se3Pose, random_rotation
from fieldfusion.renderer import EPS_ACC, Camera, composite, composite_arrays, ray_for_pixel, render

SPHERE = UniformSphereField([0.0, 0.0, 0.0], 0.5, 50.0, [0.9, 0.5, 0.1])


def random_samples(rng, n):
    edges = np.cumsum(rng.uniform(0.01, 0.5, n + 1)) + 0.5
    sig = rng.exponential(3.0, n) * (rng.uniform(size=n) > 0.3)
    col = rng.uniform(size=(n, 3))
    return [RaySample(edges[k], edges[k + 1] - edges[k], sig[k], tuple(col[k])) for k in range(n)]


def test_principal_point_pixel_is_optical_axis():
    cam = Camera(Se3Pose.identity(), 50.0, 50.0, 10.5, 7.5, 21, 15, 0.1, 10.0)
    o, d = ray_for_pixel(cam, 10, 7)
    np.testing.assert_allclose(o, 0.0)
    np.testing.assert_allclose(d, [0.0, 0.0, -1.0], atol=1e-15)


def test_symmetric_pixels_mirror_in_x():
    cam = Camera(Se3Pose.identity(), 40.0, 40.0, 8.0, 8.0, 16, 16, 0.1, 10.0)
    _, left = ray_for_pixel(cam, 3, 5)
    _, right = ray_for_pixel(cam, 12, 5)
    np.testing.assert_allclose(left * [-1, 1, 1], right, atol=1e-15)


def test_pixel_rows_grow_downward():
    cam = Camera(Se3Pose.identity(), 40.0, 40.0, 8.0, 8.0, 16, 16, 0.1, 10.0)
    assert ray_for_pixel(cam, 8, 0)[1][1] > 0 > ray_for_pixel(cam, 8, 15)[1][1]


def test_out_of_range_pixel_rejected():
    cam = Camera(Se3Pose.identity(), 40.0, 40.0, 8.0, 8.0, 16, 16, 0.1, 10.0)
    for px, py in [(-1, 0), (16, 0), (0, 16), (0, -1)]:
        with pytest.raises(IndexError):
            ray_for_pixel(cam, px, py)


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(Se3Pose.identity(), 0.0, 1.0, 0, 0, 4, 4, 0.1, 1.0)
    with pytest.raises(ValueError):
        Camera(Se3Pose.identity(), 1.0, 1.0, 0, 0, 4, 4, 1.0, 1.0)
    with pytest.raises(ValueError):
        Camera(Se3Pose.identity(), 1.0, 1.0, 0, 0, 0, 4, 0.1, 1.0)


@given(st.integers(0, 2**31))
def test_unproject_reproject_round_trip(seed):
    rng = np.random.default_rng(seed)
    pose = Se3Pose(random_rotation(rng), rng.normal(size=3))
    cam = Camera(pose, rng.uniform(20, 200), rng.uniform(20, 200), rng.uniform(5, 30), rng.uniform(5, 30), 40, 30, 0.1, 10)
    px, py = int(rng.integers(40)), int(rng.integers(30))
    o, d = ray_for_pixel(cam, px, py)
    uv = cam.project(o + rng.uniform(0.5, 5.0) * d)
    np.testing.assert_allclose(uv, [px + 0.5, py + 0.5], atol=1e-6)


def test_rays_match_ray_for_pixel():
    cam = Camera.from_fov(Se3Pose.look_at([1, 2, 3], [0, 0, 0]), 7, 5, 60.0, 0.1, 10.0)
    o, d = cam.rays()
    k = 3 * 7 + 4
    o1, d1 = ray_for_pixel(cam, 4, 3)
    np.testing.assert_allclose(o[k], o1)
    np.testing.assert_allclose(d[k], d1, atol=1e-15)


# -- compositing -----------------------------------------------------------


def test_composite_opaque_single_sample():
    out = composite([RaySample(1.0, 0.5, 100.0, (0.2, 0.4, 0.6))])
    np.testing.assert_allclose(out.color, [0.2, 0.4, 0.6], atol=1e-9)
    assert out.accumulation == pytest.approx(1.0, abs=1e-9)
    assert out.depth == pytest.approx(1.25)


def test_composite_empty_ray():
    samples = [RaySample(1.0 + k, 1.0, 0.0, (1.0, 1.0, 1.0)) for k in range(4)]
    out = composite(samples, far=5.0)
    np.testing.assert_array_equal(out.color, 0.0)
    assert out.accumulation == 0.0
    assert out.depth == 5.0
    assert composite([], far=5.0).depth == 5.0


def test_composite_two_half_opaque_samples():
    c1, c2 = np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])
    ln2 = math.log(2.0)
    out = composite([RaySample(0.0, 1.0, ln2, tuple(c1)), RaySample(1.0, 2.0, ln2 / 2, tuple(c2))])
    np.testing.assert_allclose(out.weights, [0.5, 0.25], atol=1e-15)
    np.testing.assert_allclose(out.color, 0.5 * c1 + 0.25 * c2, atol=1e-15)
    assert out.depth == pytest.approx((0.5 * 0.5 + 0.25 * 2.0) / 0.75)


def test_accumulation_identity_random_sets(rng):
    for _ in range(2000):
        s = random_samples(rng, int(rng.integers(1, 40)))
        out = composite(s)
        alpha = np.array([1 - math.exp(-x.density * x.delta) for x in s])
        assert abs(out.accumulation - (1 - np.prod(1 - alpha))) <= 1e-12


@given(st.integers(0, 2**31))
def test_probabilities_bounded_by_transmittance(seed):
    rng = np.random.default_rng(seed)
    s = random_samples(rng, 30)
    out = composite(s)
    alpha = np.array([1 - math.exp(-x.density * x.delta) for x in s])
    trans = np.concatenate([[1.0], np.cumprod(1 - alpha)[:-1]])
    assert np.all(out.weights >= 0)
    assert np.all(out.weights <= trans + 1e-15)
    assert np.all(trans <= 1.0)


@given(st.integers(0, 2**31), st.floats(0.05, 0.95))
def test_split_invariance(seed, frac):
    rng = np.random.default_rng(seed)
    s = random_samples(rng, 12)
    k = int(rng.integers(12))
    x = s[k]
    a = RaySample(x.t, frac * x.delta, x.density, x.color)
    b = RaySample(x.t + frac * x.delta, x.delta - frac * x.delta, x.density, x.color)
    split = s[:k] + [a, b] + s[k + 1 :]
    o1, o2 = composite(s), composite(split)
    np.testing.assert_allclose(o2.color, o1.color, atol=1e-9)
    assert o2.accumulation == pytest.approx(o1.accumulation, abs=1e-9)


def test_composite_errors():
    with pytest.raises(ValueError):
        composite([RaySample(0.0, 1.0, float("nan"), (0, 0, 0))])
    with pytest.raises(ValueError):
        composite([RaySample(1.0, 1.0, 1.0, (0, 0, 0)), RaySample(0.0, 0.5, 1.0, (0, 0, 0))])


def test_depth_sentinel_threshold():
    tiny = composite_arrays(np.array([[1e-6]]), np.array([[1.0]]), np.array([[2.0]]), np.zeros((1, 1, 3)), 9.0)
    assert tiny.accumulation[0] < EPS_ACC and tiny.depth[0] == 9.0


# -- rendering ---------------------------------------------------------------


def test_zero_density_render_is_black():
    empty = UniformBoxField([-1, -1, -1], [1, 1, 1], 0.0, [1, 1, 1])
    cam = Camera.from_fov(Se3Pose.look_at([0, -3, 0], [0, 0, 0]), 16, 16, 50, 0.5, 6.0)
    out = render(empty, cam, 16)
    assert np.all(out.color == 0) and np.all(out.accumulation == 0)
    assert np.all(out.depth == 6.0)


def test_sphere_silhouette_area():
    d = 3.0
    cam = Camera.from_fov(Se3Pose.look_at([0, -d, 0], [0, 0, 0]), 256, 256, 40.0, 0.5, 6.0)
    out = render(SPHERE, cam, 32, seed=0)
    area = float(np.sum(out.accumulation > 0.5))
    # projected disk: half-angle asin(r / d)
    rad = cam.fx * math.tan(math.asin(0.5 / d))
    assert area == pytest.approx(math.pi * rad**2, rel=0.02)


def test_render_outputs_in_range():
    cam = Camera.from_fov(Se3Pose.look_at([0.3, -2, 0.5], [0, 0, 0]), 32, 32, 50.0, 0.5, 5.0)
    out = render(SPHERE, cam, 16)
    assert out.color.min() >= 0 and out.color.max() <= 1
    assert out.accumulation.min() >= 0 and out.accumulation.max() <= 1
    hit = out.accumulation > EPS_ACC
    assert np.all(out.depth[hit] >= 0.5) and np.all(out.depth[hit] <= 5.0)
    assert np.all(out.depth[~hit] == 5.0)


def test_render_deterministic_and_schedule_independent():
    cam = Camera.from_fov(Se3Pose.look_at([0.3, -2, 0.5], [0, 0, 0]), 24, 20, 50.0, 0.5, 5.0)
    a = render(SPHERE, cam, 16, seed=4)
    b = render(SPHERE, cam, 16, seed=4, chunk=37, workers=3)
    np.testing.assert_array_equal(a.color, b.color)
    np.testing.assert_array_equal(a.depth, b.depth)
    c = render(SPHERE, cam, 16, seed=5)
    assert not np.array_equal(a.color, c.color)


def test_budget_refinement_improves():
    soft = UniformSphereField([0.0, 0.0, 0.0], 0.6, 3.0, [0.9, 0.5, 0.1])
    cam = Camera.from_fov(Se3Pose.look_at([0.2, -2.5, 0.3], [0, 0, 0]), 32, 32, 50.0, 0.5, 5.0)
    ref = render(soft, cam, 4096, seed=0).color

    def psnr(x):
        return -10 * math.log10(np.mean((x - ref) ** 2))

    p64 = psnr(render(soft, cam, 64, seed=0).color)
    p128 = psnr(render(soft, cam, 128, seed=0).color)
    assert p128 > p64
