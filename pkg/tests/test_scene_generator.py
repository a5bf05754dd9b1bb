# tests/test_scene_generator.py
import math

import numpy as np
import pytest

from agents.scene_generator import (
    make_background,
    make_background_sequence,
    rasterize_object,
    render_scene,
    sample_scene,
    sample_scene_pair,
    sample_specs,
)
from services.energy import loss_image
from services.errors import SceneError
from services.formation import compose_subframes
from services.image_service import Image, save_png
from services.scene_model import ObjectSpec, Pose, TrajectorySpec

SQUARE = ((-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0))


def brute_force_coverage(obj, pose, canvas, per_axis=64):
    """Coverage by dense point sampling of every pixel (per_axis^2 points)."""
    width, height = canvas
    offsets = (np.arange(per_axis) + 0.5) / per_axis - 0.5
    coverage = np.zeros((height, width))
    theta = math.radians(pose.angle)
    radius = obj.size * pose.scale
    vertices = np.asarray(obj.vertices)
    for y in range(height):
        for x in range(width):
            px = x + offsets[None, :] - pose.center[0]
            py = y + offsets[:, None] - pose.center[1]
            u = (math.cos(theta) * px + math.sin(theta) * py) / radius
            v = (-math.sin(theta) * px + math.cos(theta) * py) / radius
            inside = np.ones(u.shape, dtype=bool)
            for (x0, y0), (x1, y1) in zip(vertices, np.roll(vertices, -1, axis=0)):
                inside &= (x1 - x0) * (v - y0) - (y1 - y0) * (u - x0) >= 0
            coverage[y, x] = inside.mean()
    return coverage


def test_polygon_validation():
    with pytest.raises(SceneError):
        ObjectSpec("polygon", 3.0, vertices=((0, 0), (1, 0)))
    with pytest.raises(SceneError):
        ObjectSpec("polygon", 3.0, vertices=((0, 0), (1, 0), (2, 0)))
    with pytest.raises(SceneError):
        ObjectSpec("polygon", 3.0, vertices=((0, 0), (2, 0), (0.5, 0.5), (0, 2)))
    with pytest.raises(SceneError):
        ObjectSpec("disc", 3.0, colors=((1.2, 0, 0),))
    clockwise = ObjectSpec("polygon", 3.0, vertices=SQUARE[::-1])
    assert clockwise.vertices == SQUARE


def test_square_covering_a_pixel_block_exactly():
    """Test a square whose edges fall on pixel boundaries: interior 1, exterior 0."""
    obj = ObjectSpec("polygon", 2.0, vertices=SQUARE)
    rendering = rasterize_object(obj, Pose((4.5, 4.5)), (10, 10))
    M = rendering.M.data[..., 0]
    assert np.all(M[3:7, 3:7] == 1.0)
    outside = np.ones_like(M, dtype=bool)
    outside[3:7, 3:7] = False
    assert np.all(M[outside] == 0.0)


def test_half_pixel_shift_gives_half_coverage_on_the_boundary():
    obj = ObjectSpec("polygon", 2.0, vertices=SQUARE)
    M = rasterize_object(obj, Pose((5.0, 4.5)), (10, 10)).M.data[..., 0]
    s = 4
    assert abs(M[4, 3] - 0.5) <= 1.0 / (2 * s)
    assert abs(M[4, 7] - 0.5) <= 1.0 / (2 * s)
    assert M[4, 5] == 1.0


def test_random_polygon_coverage_matches_dense_sampling(rng):
    """Test supersampled coverage against 64x64-per-pixel point sampling."""
    angles = np.arange(6) * math.pi / 3 + rng.uniform(-0.3, 0.3, size=6)
    vertices = tuple((math.cos(a), math.sin(a)) for a in angles)
    obj = ObjectSpec("polygon", 4.5, vertices=vertices)
    pose = Pose((7.3, 6.8), 1.1, 17.0)
    canvas = (14, 14)
    fast = rasterize_object(obj, pose, canvas).M.data[..., 0]
    oracle = brute_force_coverage(obj, pose, canvas)
    assert np.abs(fast - oracle).mean() <= 0.02
    assert fast.sum() == pytest.approx(oracle.sum(), rel=0.01)


def test_appearance_is_zero_outside_the_object():
    obj = ObjectSpec("disc", 3.0, texture="checker", colors=((1, 0, 0), (0, 0, 1)))
    rendering = rasterize_object(obj, Pose((8.0, 8.0)), (16, 16))
    M, F = rendering.M.data[..., 0], rendering.F.data
    assert np.all(F[M == 0] == 0.0)
    assert np.all(F[M > 0].max(axis=-1) > 0)


def test_zero_size_object_is_an_error():
    with pytest.raises(SceneError):
        rasterize_object(ObjectSpec("disc", 0.0), Pose((5.0, 5.0)), (10, 10))


def test_uniform_disc_translation_conserves_mask_area():
    """Test that a white disc translated without scaling keeps its analytic area in every sub-frame."""
    obj = ObjectSpec("disc", 8.0)
    trajectory = TrajectorySpec((16.0, 20.0), (24.0, 9.0))
    background = make_background(0, (64, 64), "uniform", colors=[(0.0, 0.0, 0.0)])
    sample = render_scene(obj, trajectory, background, n_subframes=24)
    areas = sample.gt_stack.M.reshape(24, -1).sum(axis=1)
    assert (areas.max() - areas.min()) / areas.mean() <= 0.01
    assert areas.mean() == pytest.approx(math.pi * 64, rel=0.01)
    xs = sample.gt_traj.centers[:, 0]
    assert np.all(np.diff(xs) > 0)


def test_sample_scene_is_deterministic_and_self_consistent():
    first = sample_scene(7, canvas=(48, 48), n_subframes=12)
    second = sample_scene(7, canvas=(48, 48), n_subframes=12)
    assert np.array_equal(first.I.data, second.I.data)
    assert np.array_equal(first.gt_stack.M, second.gt_stack.M)
    assert first.gt_stack.n == 12
    assert np.abs(compose_subframes(first.gt_stack, first.B).data - first.I.data).max() == 0.0
    assert loss_image(first.gt_stack, first.I, first.B) <= 1e-12


def test_gt_trajectory_is_the_mask_centroid():
    sample = sample_scene(3, canvas=(48, 48), n_subframes=8)
    yy, xx = np.mgrid[0:48, 0:48]
    for i in range(8):
        m = sample.gt_stack.M[i, ..., 0]
        np.testing.assert_allclose(sample.gt_traj.centers[i], [(xx * m).sum() / m.sum(), (yy * m).sum() / m.sum()], atol=1e-9)


def test_masks_are_fractional_only_on_edges():
    sample = sample_scene(11, canvas=(48, 48), n_subframes=4)
    for mask in sample.gt_stack.M[..., 0]:
        fractional = (mask > 0) & (mask < 1)
        interior = mask == 1.0
        assert interior.sum() > fractional.sum() / 4
        # fractional pixels lie within two pixels of empty canvas
        padded = np.pad(mask, 2)
        for y, x in zip(*np.nonzero(fractional)):
            assert padded[y:y + 5, x:x + 5].min() == 0.0


def test_sampled_trajectories_respect_the_ranges():
    """Test displacement, scale and rotation ranges over many seeds."""
    for seed in range(1000):
        obj, trajectory = sample_specs(seed, (64, 64))
        ratio = trajectory.magnitude / (2 * obj.size)
        assert 0.5 <= ratio <= 2.0
        assert 1.0 <= trajectory.scale_rate <= 1.2
        assert abs(trajectory.rotation) <= 30.0


def test_small_canvas_is_rejected():
    with pytest.raises(SceneError):
        sample_specs(0, (16, 16))


def test_backgrounds():
    black = make_background(0, (8, 6), "uniform", colors=[(0.0, 0.0, 0.0)])
    assert black.data.shape == (6, 8, 3) and np.all(black.data == 0.0)
    c0, c1 = np.array([0.0, 0.2, 1.0]), np.array([1.0, 0.6, 0.0])
    ramp = make_background(0, (5, 3), "gradient", colors=[c0, c1])
    for x in range(5):
        np.testing.assert_allclose(ramp.data[1, x], c0 + (c1 - c0) * x / 4)
    assert np.array_equal(make_background(9, (32, 32), "noise").data, make_background(9, (32, 32), "noise").data)
    noise = make_background(9, (32, 32), "noise").data
    assert noise.min() >= 0.0 and noise.max() <= 1.0


def test_image_background_is_resampled(tmp_path, rng):
    path = tmp_path / "bg.png"
    save_png(Image(rng.uniform(size=(20, 30, 3))), path)
    background = make_background(0, (16, 12), "image", path=str(path))
    assert (background.width, background.height, background.channels) == (16, 12, 3)
    with pytest.raises(SceneError):
        make_background(0, (16, 12), "image", path=str(tmp_path / "missing.png"))


def test_dynamic_background_uses_median_of_previous_frames():
    frames = make_background_sequence(5, (32, 32), "gradient", n_frames=6, jitter=0.05)
    assert len(frames) == 6
    sample = sample_scene(5, canvas=(32, 32), n_subframes=8, dynamic_background=True)
    assert sample.background_true is not None
    assert not np.array_equal(sample.B.data, sample.background_true.data)
    np.testing.assert_array_equal(compose_subframes(sample.gt_stack, sample.background_true).data, sample.I.data)


def test_scene_pair_shares_the_object():
    first, second = sample_scene_pair(4, canvas=(32, 32), n_subframes=6)
    assert np.array_equal(first.gt_stack.M, second.gt_stack.M)
    assert not np.array_equal(first.B.data, second.B.data)
