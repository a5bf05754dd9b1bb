# tests/test_image_service.py
import os

import numpy as np
import pytest
from PIL import Image as PILImage

from services.errors import ImageError
from services.image_service import (
    Image,
    Rendering,
    RenderingStack,
    load_png,
    median_background,
    save_png,
    shift_array,
    stack_times,
    temporal_mean,
)


def test_image_rejects_non_finite_pixel():
    """Test that NaN or inf pixels are refused."""
    data = np.zeros((4, 4, 3))
    data[1, 2, 0] = np.nan
    with pytest.raises(ImageError, match="non-finite pixel"):
        Image(data)


def test_image_rejects_bad_channel_count():
    with pytest.raises(ImageError):
        Image(np.zeros((4, 4, 2)))


def test_image_is_a_frozen_copy():
    """Test that the container copies and freezes its input."""
    source = np.zeros((3, 3, 3))
    img = Image(source)
    source[0, 0, 0] = 1.0
    assert img.data[0, 0, 0] == 0.0
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1.0


def test_two_dimensional_input_becomes_single_channel():
    img = Image(np.ones((5, 7)))
    assert (img.height, img.width, img.channels) == (5, 7, 1)
    assert img.size == (7, 5)


def test_rendering_validates_range_and_shape():
    F = Image(np.full((4, 4, 3), 0.5))
    with pytest.raises(ImageError):
        Rendering(F, Image(np.full((4, 4, 1), 1.5)))
    with pytest.raises(ImageError):
        Rendering(F, Image(np.full((5, 4, 1), 0.5)))
    with pytest.raises(ImageError):
        Rendering(Image(np.full((4, 4, 1), 0.5)), Image(np.full((4, 4, 1), 0.5)))


def test_stack_times():
    assert stack_times(1).tolist() == [0.5]
    assert stack_times(5).tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    with pytest.raises(ImageError):
        stack_times(0)


def test_stack_requires_shared_dimensions():
    with pytest.raises(ImageError):
        RenderingStack(np.zeros((2, 4, 4, 3)), np.zeros((2, 4, 5, 1)))


def test_stack_indexing_and_reversal(stack):
    """Test that reversed() flips the sub-frame order and indexing yields renderings."""
    back = stack.reversed()
    assert len(back) == stack.n
    np.testing.assert_array_equal(back.F[0], stack.F[-1])
    np.testing.assert_array_equal(back[1].M.data, stack[stack.n - 2].M.data)
    assert stack.joint().shape == (stack.n, stack.height, stack.width, 4)


def test_temporal_mean_is_exactly_reversal_invariant(rng):
    """Test that the mirrored-pair mean gives bit-identical results on reversed input."""
    for n in range(1, 9):
        values = rng.uniform(size=(n, 6, 6, 3))
        forward = temporal_mean(values)
        backward = temporal_mean(values[::-1])
        assert np.array_equal(forward, backward)
        np.testing.assert_allclose(forward, values.mean(axis=0), atol=1e-15)


def test_shift_array_moves_content_and_zero_fills():
    arr = np.arange(16, dtype=float).reshape(4, 4)
    out = shift_array(arr, 1, 2)
    assert out[2, 1] == arr[0, 0]
    assert out[3, 3] == arr[1, 2]
    assert np.all(out[:2] == 0) and np.all(out[:, 0] == 0)
    assert np.all(shift_array(arr, 4, 0) == 0)


def test_median_background_even_count_averages_middle_values():
    frames = [Image(np.full((2, 2, 3), v)) for v in (0.1, 0.4, 0.2, 0.9)]
    np.testing.assert_allclose(median_background(frames).data, 0.3)


def test_median_background_odd_count_picks_the_middle_value():
    frames = [Image(np.full((2, 2, 3), v)) for v in (0.0, 1.0, 0.0, 1.0, 0.0)]
    assert np.all(median_background(frames).data == 0.0)


def test_median_background_of_identical_frames_is_that_frame(rng):
    frame = Image(rng.uniform(size=(5, 6, 3)))
    assert np.array_equal(median_background([frame] * 5).data, frame.data)


def test_median_background_matches_sort_and_pick(rng):
    """Test the median of 5 random frames against sorting every pixel and taking the middle."""
    data = rng.uniform(size=(5, 7, 8, 3))
    oracle = np.sort(data, axis=0)[2]
    assert np.array_equal(median_background([Image(d) for d in data]).data, oracle)
    shuffled = [Image(data[i]) for i in rng.permutation(5)]
    assert np.array_equal(median_background(shuffled).data, oracle)


def test_median_background_recovers_a_strict_majority(rng):
    """Test that a background present in 3 of 5 frames survives any content in the other two."""
    background = rng.uniform(size=(6, 6, 3))
    frames = [Image(background), Image(rng.uniform(size=(6, 6, 3))), Image(background),
              Image(rng.uniform(size=(6, 6, 3))), Image(background)]
    assert np.array_equal(median_background(frames).data, background)


def test_median_background_rejects_mismatched_frames():
    with pytest.raises(ImageError):
        median_background([Image(np.zeros((2, 2, 3))), Image(np.zeros((3, 2, 3)))])
    with pytest.raises(ImageError):
        median_background([])


def test_png_round_trip_8bit_error_bound(rng, tmp_path):
    """Test that an 8-bit round trip stays within half a code value."""
    img = Image(rng.uniform(size=(9, 11, 3)))
    path = tmp_path / "rgb.png"
    save_png(img, path)
    back = load_png(path)
    assert back.data.shape == img.data.shape
    assert np.abs(back.data - img.data).max() <= 1.0 / 510 + 1e-12


def test_png_round_trip_16bit_mask(rng, tmp_path):
    mask = Image(rng.uniform(size=(9, 11, 1)))
    path = tmp_path / "nested" / "mask.png"
    save_png(mask, path, bit_depth=16)
    assert os.path.isfile(path)
    back = load_png(path)
    assert back.channels == 1
    assert np.abs(back.data - mask.data).max() <= 1.0 / 131070 + 1e-12


def test_save_png_rejects_out_of_range_and_16bit_color(tmp_path):
    with pytest.raises(ImageError):
        save_png(Image(np.full((2, 2, 3), 1.2)), tmp_path / "bad.png")
    with pytest.raises(ImageError):
        save_png(Image(np.full((2, 2, 3), 0.5)), tmp_path / "bad16.png", bit_depth=16)


def test_load_png_reports_unreadable_file(tmp_path):
    path = tmp_path / "broken.png"
    path.write_bytes(b"not a png")
    with pytest.raises(ImageError, match="unreadable PNG"):
        load_png(path)


def test_load_png_converts_palette_images(tmp_path):
    path = tmp_path / "palette.png"
    PILImage.new("RGB", (4, 3), (255, 0, 0)).convert("P").save(path)
    img = load_png(path)
    assert img.channels == 3
    np.testing.assert_allclose(img.data[..., 0], 1.0)


def test_png_round_trip_keeps_black_exact_and_is_stable(rng, tmp_path):
    black = Image(np.zeros((4, 5, 3)))
    save_png(black, tmp_path / "black.png")
    assert np.array_equal(load_png(tmp_path / "black.png").data, black.data)

    save_png(Image(rng.uniform(size=(7, 9, 3))), tmp_path / "first.png")
    once = load_png(tmp_path / "first.png")
    save_png(once, tmp_path / "second.png")
    twice = load_png(tmp_path / "second.png")
    assert np.array_equal(twice.data, once.data)
    assert (tmp_path / "first.png").read_bytes() == (tmp_path / "second.png").read_bytes()
