"""Loss terms over a rendering stack and their analytic gradients.

The self-supervised energy is alpha_I * L_I + alpha_T * L_T + alpha_S * L_S:
image reconstruction (masked L1 against the temporal-integration composite),
time consistency (1 - mean maxncc of neighbouring renderings) and sharpness
(mean binary entropy of the masks). The supervised appearance term L_F is
only available when a ground-truth stack is supplied.
"""

import logging
import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from services.errors import EnergyError
from services.formation import composite_array
from services.image_service import Image, RenderingStack, temporal_mean
from services.ncc import DEFAULT_PAD_FRACTION, ncc_at_shift, pair_maxncc

logger = logging.getLogger("fmo.energy")

ENTROPY_CLAMP = 1e-4
Shift = Tuple[int, int]


class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True)
class EnergyWeights:
    alpha_I: float = 1.0
    alpha_T: float = 5.0
    alpha_S: float = 1.0
    alpha_F: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value) or value < 0:
                raise EnergyError(f"weight {name} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class EnergyBreakdown:
    total: float
    image: float
    time: float
    sharp: float
    appearance: Optional[float] = None


@dataclass(frozen=True, eq=False)
class StackGradient:
    dF: np.ndarray
    dM: np.ndarray


@dataclass(frozen=True)
class AppearanceLoss:
    value: float
    direction: Direction
    empty_subframes: Tuple[int, ...] = ()


@dataclass(frozen=True, eq=False)
class Evaluation:
    breakdown: EnergyBreakdown
    gradient: Optional[StackGradient]
    shifts: Tuple[Shift, ...]


def _as_array(value: Union[Image, np.ndarray]) -> np.ndarray:
    return value.data if isinstance(value, Image) else np.asarray(value, dtype=np.float64)


def _l1(a: np.ndarray, b: np.ndarray, occupancy: Optional[np.ndarray] = None) -> float:
    diff = np.abs(a - b).sum(axis=-1)
    if occupancy is None:
        return float(diff.sum() / diff.size)
    mask = occupancy.reshape(diff.shape) > 0.5
    count = int(mask.sum())
    if count == 0:
        raise EnergyError("empty occupancy")
    return float(diff[mask].sum() / count)


def l1_masked(A, B, O=None) -> float:
    """Mean over the occupied pixels of the channel-summed absolute difference."""
    a, b = _as_array(A), _as_array(B)
    if a.shape != b.shape:
        raise EnergyError(f"shape mismatch {a.shape} vs {b.shape}")
    occupancy = None if O is None else _as_array(O)
    if occupancy is not None and occupancy.shape[:2] != a.shape[:2]:
        raise EnergyError("occupancy mask size differs from the images")
    return _l1(a, b, occupancy)


def binary_entropy(m: np.ndarray) -> np.ndarray:
    clamped = np.clip(m, ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP)
    h = -clamped * np.log(clamped) - (1.0 - clamped) * np.log1p(-clamped)
    return np.where((m <= 0.0) | (m >= 1.0), 0.0, h)


def _sharpness_value(M: np.ndarray) -> float:
    per_frame = binary_entropy(M).reshape(M.shape[0], -1).mean(axis=1)
    return float(temporal_mean(per_frame))


def _sharpness_gradient(M: np.ndarray) -> np.ndarray:
    inside = (M > ENTROPY_CLAMP) & (M < 1.0 - ENTROPY_CLAMP)
    safe = np.where(inside, M, 0.5)
    scale = M.shape[0] * M.shape[1] * M.shape[2]
    return np.where(inside, np.log1p(-safe) - np.log(safe), 0.0) / scale


def _image_gradient(F, M, B, residual) -> Tuple[np.ndarray, np.ndarray]:
    n, h, w = F.shape[:3]
    sign = np.sign(residual)
    scale = n * h * w
    dF = sign[None] * M / scale
    dM = (sign[None] * (F - B[None])).sum(axis=-1, keepdims=True) / scale
    return dF, dM


def _check_inputs(stack: RenderingStack, I: Image, B: Image) -> None:
    for name, img in (("input", I), ("background", B)):
        if not stack.matches(img):
            raise EnergyError(
                f"{name} is {img.width}x{img.height}, stack is {stack.width}x{stack.height}"
            )
        if img.channels != 3:
            raise EnergyError(f"{name} needs 3 channels, got {img.channels}")


def _time_term(
    joint: np.ndarray,
    pad_fraction: float,
    shifts: Optional[Sequence[Shift]],
    with_grad: bool,
):
    n = joint.shape[0]
    if shifts is None:
        matches = [pair_maxncc(joint[i], joint[i + 1], pad_fraction) for i in range(n - 1)]
        shifts = tuple(m.shift for m in matches)
        values = [m.value for m in matches]
    else:
        shifts = tuple(tuple(s) for s in shifts)
        if len(shifts) != n - 1:
            raise EnergyError(f"expected {n - 1} shifts, got {len(shifts)}")
        values = [ncc_at_shift(joint[i], joint[i + 1], shifts[i], with_grad=False)[0] for i in range(n - 1)]

    grad = None
    if with_grad:
        grad = np.zeros_like(joint)
        for i, shift in enumerate(shifts):
            _, ga, gb = ncc_at_shift(joint[i], joint[i + 1], shift)
            grad[i] -= ga / (n - 1)
            grad[i + 1] -= gb / (n - 1)
    return 1.0 - float(temporal_mean(np.array(values))), grad, shifts


def evaluate_arrays(
    F: np.ndarray,
    M: np.ndarray,
    I: np.ndarray,
    B: np.ndarray,
    weights: EnergyWeights,
    pad_fraction: float = DEFAULT_PAD_FRACTION,
    shifts: Optional[Sequence[Shift]] = None,
    with_grad: bool = False,
) -> Evaluation:
    """Self-supervised energy (and gradient) on raw stacked arrays.

    With `shifts` given, L_T is evaluated at those fixed shifts instead of
    searching for the best one.
    """
    n = F.shape[0]
    residual = composite_array(F, M, B) - I
    image = _l1(residual, 0.0)
    sharp = _sharpness_value(M)

    time_grad = None
    used_shifts: Tuple[Shift, ...] = ()
    if n >= 2:
        joint = np.concatenate([F, M], axis=-1)
        time, time_grad, used_shifts = _time_term(
            joint, pad_fraction, shifts, with_grad and weights.alpha_T > 0
        )
    elif weights.alpha_T > 0:
        raise EnergyError("time consistency undefined for fewer than 2 sub-frames")
    else:
        time = 0.0

    total = weights.alpha_I * image + weights.alpha_T * time + weights.alpha_S * sharp
    breakdown = EnergyBreakdown(total=total, image=image, time=time, sharp=sharp)

    gradient = None
    if with_grad:
        dF = np.zeros_like(F)
        dM = np.zeros_like(M)
        if weights.alpha_I > 0:
            gF, gM = _image_gradient(F, M, B, residual)
            dF += weights.alpha_I * gF
            dM += weights.alpha_I * gM
        if weights.alpha_S > 0:
            dM += weights.alpha_S * _sharpness_gradient(M)
        if time_grad is not None:
            dF += weights.alpha_T * time_grad[..., :3]
            dM += weights.alpha_T * time_grad[..., 3:]
        gradient = StackGradient(dF, dM)
    return Evaluation(breakdown, gradient, used_shifts)


def loss_image(stack: RenderingStack, I: Image, B: Image) -> float:
    _check_inputs(stack, I, B)
    return _l1(composite_array(stack.F, stack.M, B.data), I.data)


def loss_time(stack: RenderingStack, pad_fraction: float = DEFAULT_PAD_FRACTION) -> float:
    if stack.n < 2:
        raise EnergyError("time consistency undefined for fewer than 2 sub-frames")
    value, _, _ = _time_term(stack.joint(), pad_fraction, None, with_grad=False)
    return value


def loss_sharp(stack: RenderingStack) -> float:
    return _sharpness_value(stack.M)


def _appearance_pair(Fe, Me, Fg, Mg, threshold) -> Tuple[float, bool]:
    inside = Mg[..., 0] > threshold
    outside = ~inside
    value = 0.0
    empty = not inside.any()
    if not empty:
        value += _l1(Me, Mg, inside) + _l1(Fe * Me, Fg * Mg, inside)
    if outside.any():
        value += _l1(Me, Mg, outside)
    return value, empty


def loss_appearance(est: RenderingStack, gt: RenderingStack, gt_threshold: float = 0.0) -> AppearanceLoss:
    """Supervised appearance loss, minimum over the two time directions (ties: forward).

    Sub-frames whose ground-truth support is empty contribute nothing for
    the support terms and are listed in `empty_subframes`.
    """
    if est.n != gt.n or (est.height, est.width) != (gt.height, gt.width):
        raise EnergyError("estimated and ground-truth stacks differ in shape")
    n = gt.n
    empty: List[int] = []
    forward: List[float] = []
    backward: List[float] = []
    for i in range(n):
        value, is_empty = _appearance_pair(est.F[i], est.M[i], gt.F[i], gt.M[i], gt_threshold)
        forward.append(value)
        if is_empty:
            empty.append(i)
        j = n - 1 - i
        backward.append(_appearance_pair(est.F[j], est.M[j], gt.F[i], gt.M[i], gt_threshold)[0])
    if empty:
        logger.debug("appearance loss: empty ground-truth support in sub-frames %s", empty)
    forward_value = sum(forward) / n
    backward_value = sum(backward) / n
    if backward_value < forward_value:
        return AppearanceLoss(backward_value, Direction.BACKWARD, tuple(empty))
    return AppearanceLoss(forward_value, Direction.FORWARD, tuple(empty))


def energy_total(
    stack: RenderingStack,
    I: Image,
    B: Image,
    weights: Optional[EnergyWeights] = None,
    oracle_gt: Optional[RenderingStack] = None,
    pad_fraction: float = DEFAULT_PAD_FRACTION,
) -> EnergyBreakdown:
    weights = weights or EnergyWeights()
    _check_inputs(stack, I, B)
    breakdown = evaluate_arrays(stack.F, stack.M, I.data, B.data, weights, pad_fraction).breakdown
    if oracle_gt is None:
        return breakdown
    appearance = loss_appearance(stack, oracle_gt).value
    return EnergyBreakdown(
        total=breakdown.total + weights.alpha_F * appearance,
        image=breakdown.image,
        time=breakdown.time,
        sharp=breakdown.sharp,
        appearance=appearance,
    )


def energy_gradient(
    stack: RenderingStack,
    I: Image,
    B: Image,
    weights: Optional[EnergyWeights] = None,
    pad_fraction: float = DEFAULT_PAD_FRACTION,
    shifts: Optional[Sequence[Shift]] = None,
) -> Tuple[EnergyBreakdown, StackGradient]:
    """Breakdown and analytic gradient of the self-supervised energy.

    The time term is differentiated at its best shifts (held constant);
    entropy gradients vanish outside the clamp band.
    """
    weights = weights or EnergyWeights()
    _check_inputs(stack, I, B)
    evaluation = evaluate_arrays(
        stack.F, stack.M, I.data, B.data, weights, pad_fraction, shifts=shifts, with_grad=True
    )
    return evaluation.breakdown, evaluation.gradient


def reverse_stack(stack: RenderingStack) -> RenderingStack:
    return stack.reversed()
