# tests/test_energy.py
import math

import numpy as np
import pytest

from conftest import random_image, random_stack
from services import energy
from services.energy import (
    Direction,
    EnergyWeights,
    binary_entropy,
    energy_gradient,
    energy_total,
    l1_masked,
    loss_appearance,
    loss_image,
    loss_sharp,
    loss_time,
    reverse_stack,
)
from services.errors import EnergyError
from services.formation import compose_subframes
from services.image_service import Image, RenderingStack


def test_l1_masked_closed_form():
    """Test the channel-summed absolute difference averaged over occupied pixels."""
    A = Image(np.zeros((2, 2, 3)))
    B = Image(np.full((2, 2, 3), 0.1))
    assert l1_masked(A, B) == pytest.approx(0.3)
    occupancy = Image(np.array([[1.0, 0.0], [0.0, 0.0]]))
    C = Image(np.where(np.arange(4).reshape(2, 2, 1) == 0, 0.5, 0.0) * np.ones((1, 1, 3)))
    assert l1_masked(C, A, occupancy) == pytest.approx(1.5)


def test_l1_masked_empty_occupancy():
    A = Image(np.zeros((2, 2, 3)))
    with pytest.raises(EnergyError, match="empty occupancy"):
        l1_masked(A, A, Image(np.zeros((2, 2, 1))))


def test_binary_entropy_values():
    m = np.array([0.0, 0.5, 1.0, 0.25])
    h = binary_entropy(m)
    assert h[0] == 0.0 and h[2] == 0.0
    assert h[1] == pytest.approx(math.log(2.0))
    assert h[3] == pytest.approx(-0.25 * math.log(0.25) - 0.75 * math.log(0.75))


def test_binary_masks_have_zero_sharpness_loss(rng):
    masks = (rng.uniform(size=(3, 8, 8, 1)) > 0.5).astype(float)
    stack = RenderingStack(np.zeros((3, 8, 8, 3)), masks)
    assert loss_sharp(stack) == 0.0
    half = RenderingStack(np.zeros((3, 8, 8, 3)), np.full((3, 8, 8, 1), 0.5))
    assert loss_sharp(half) == pytest.approx(math.log(2.0))


def test_ground_truth_stack_has_zero_image_loss(rng):
    stack = random_stack(rng)
    B = random_image(rng)
    I = compose_subframes(stack, B)
    assert loss_image(stack, I, B) <= 1e-12


def test_identical_subframes_have_zero_time_loss(rng):
    single = random_stack(rng, n=1)
    stack = RenderingStack(np.repeat(single.F, 4, axis=0), np.repeat(single.M, 4, axis=0))
    assert loss_time(stack) == pytest.approx(0.0, abs=1e-12)


def test_time_loss_needs_two_subframes(rng):
    with pytest.raises(EnergyError, match="time consistency undefined"):
        loss_time(random_stack(rng, n=1))


def test_losses_are_exactly_reversal_invariant(rng):
    """Test bit-identical loss values for a stack and its reverse."""
    for n in (2, 3, 5, 6):
        stack = random_stack(rng, n=n)
        back = reverse_stack(stack)
        I, B = random_image(rng), random_image(rng)
        assert loss_image(stack, I, B) == loss_image(back, I, B)
        assert loss_time(stack) == loss_time(back)
        assert loss_sharp(stack) == loss_sharp(back)
        assert energy_total(stack, I, B).total == energy_total(back, I, B).total


def test_appearance_loss_prefers_the_better_direction(rng):
    gt = random_stack(rng, n=4)
    forward = loss_appearance(gt, gt)
    assert forward.value == 0.0 and forward.direction is Direction.FORWARD
    backward = loss_appearance(gt.reversed(), gt)
    assert backward.value == 0.0 and backward.direction is Direction.BACKWARD


def test_appearance_loss_reports_empty_ground_truth_subframes(rng):
    gt_masks = rng.uniform(0.2, 1.0, size=(3, 8, 8, 1))
    gt_masks[1] = 0.0
    gt = RenderingStack(rng.uniform(size=(3, 8, 8, 3)), gt_masks)
    est = random_stack(rng, n=3, height=8, width=8)
    result = loss_appearance(est, gt)
    assert result.empty_subframes == (1,)
    assert math.isfinite(result.value)


def test_energy_total_adds_weighted_appearance_with_oracle(rng):
    stack = random_stack(rng)
    I, B = random_image(rng), random_image(rng)
    weights = EnergyWeights(alpha_F=2.0)
    plain = energy_total(stack, I, B, weights)
    supervised = energy_total(stack, I, B, weights, oracle_gt=stack.reversed())
    assert supervised.appearance == 0.0
    assert supervised.total == plain.total
    other = random_stack(rng)
    with_gt = energy_total(stack, I, B, weights, oracle_gt=other)
    assert with_gt.total == pytest.approx(plain.total + 2.0 * with_gt.appearance)


def test_weights_are_validated():
    with pytest.raises(EnergyError):
        EnergyWeights(alpha_T=-1.0)
    with pytest.raises(EnergyError):
        EnergyWeights(alpha_I=float("nan"))


def test_image_gradient_single_pixel_example():
    """Test the sign subgradient of L_I on a 1x1, N=2 problem."""
    F = np.array([0.8, 0.2]).reshape(2, 1, 1, 1) * np.ones((1, 1, 1, 3))
    M = np.array([0.5, 0.5]).reshape(2, 1, 1, 1)
    stack = RenderingStack(F, M)
    B = Image(np.zeros((1, 1, 3)))
    I = Image(np.full((1, 1, 3), 0.1))
    weights = EnergyWeights(alpha_I=1.0, alpha_T=0.0, alpha_S=0.0)
    _, gradient = energy_gradient(stack, I, B, weights)
    # composite is 0.25 > 0.1 in every channel, so d/dF_i = M_i / (N * |D|)
    np.testing.assert_allclose(gradient.dF, 0.25)
    np.testing.assert_allclose(gradient.dM[:, 0, 0, 0], [3 * 0.8 / 2, 3 * 0.2 / 2])


def test_gradient_matches_finite_differences(rng):
    """Test the full analytic gradient against central differences with the shifts held fixed."""
    F = rng.uniform(0.1, 0.9, size=(4, 12, 12, 3))
    M = rng.uniform(0.1, 0.9, size=(4, 12, 12, 1))
    I = rng.uniform(size=(12, 12, 3))
    B = rng.uniform(size=(12, 12, 3))
    weights = EnergyWeights()
    evaluation = energy.evaluate_arrays(F, M, I, B, weights, with_grad=True)
    residual = energy.composite_array(F, M, B) - I
    h = 1e-5

    def total():
        return energy.evaluate_arrays(F, M, I, B, weights, shifts=evaluation.shifts).breakdown.total

    checked = 0
    for _ in range(40):
        i, y, x = rng.integers(4), rng.integers(12), rng.integers(12)
        if np.abs(residual[y, x]).min() < 1e-3:
            continue
        for array, grad, index in (
            (F, evaluation.gradient.dF, (i, y, x, rng.integers(3))),
            (M, evaluation.gradient.dM, (i, y, x, 0)),
        ):
            original = array[index]
            array[index] = original + h
            upper = total()
            array[index] = original - h
            lower = total()
            array[index] = original
            numeric = (upper - lower) / (2 * h)
            assert grad[index] == pytest.approx(numeric, rel=1e-3, abs=1e-8)
            checked += 1
    assert checked > 20


def test_entropy_gradient_vanishes_outside_clamp_band():
    M = np.array([0.0, 1e-5, 0.3, 1.0]).reshape(1, 1, 4, 1)
    grad = energy._sharpness_gradient(M)
    assert grad[0, 0, 0, 0] == 0.0 and grad[0, 0, 1, 0] == 0.0 and grad[0, 0, 3, 0] == 0.0
    assert grad[0, 0, 2, 0] == pytest.approx(math.log(0.7 / 0.3) / 4)


def test_energy_rejects_mismatched_inputs(rng):
    stack = random_stack(rng)
    with pytest.raises(EnergyError):
        energy_total(stack, random_image(rng, 8, 8), random_image(rng))
