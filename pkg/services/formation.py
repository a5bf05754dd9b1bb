"""Forward image-formation operators.

compose_subframes is the temporal-integration model over a rendering stack,
compose_blatting the classical blur-and-matte model with a sparse kernel, and
compose_instant / compose_exposure render zero- or finite-exposure frames
for temporal super-resolution.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from services.errors import FormationError
from services.image_service import Image, RenderingStack, shift_array, temporal_mean

logger = logging.getLogger("fmo.formation")

EXPOSURE_SAMPLES = 5
KERNEL_TOLERANCE = 1e-9


@dataclass(frozen=True)
class BlurKernel:
    """Sparse blur kernel of integer-offset taps (dx, dy, weight)."""

    taps: Tuple[Tuple[int, int, float], ...]

    def __post_init__(self):
        cleaned = []
        for dx, dy, weight in self.taps:
            if int(dx) != dx or int(dy) != dy:
                raise FormationError(f"kernel offsets must be integers, got ({dx}, {dy})")
            if weight < 0 or not np.isfinite(weight):
                raise FormationError(f"kernel weights must be finite and >= 0, got {weight}")
            cleaned.append((int(dx), int(dy), float(weight)))
        object.__setattr__(self, "taps", tuple(cleaned))

    @classmethod
    def from_offsets(cls, offsets: Iterable[Tuple[int, int]]) -> "BlurKernel":
        offsets = list(offsets)
        if not offsets:
            raise FormationError("kernel needs at least one tap")
        weight = 1.0 / len(offsets)
        return cls(tuple((dx, dy, weight) for dx, dy in offsets))

    @property
    def total_weight(self) -> float:
        return float(sum(w for _, _, w in self.taps))

    def is_normalized(self) -> bool:
        return abs(self.total_weight - 1.0) <= KERNEL_TOLERANCE

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Sparse convolution, zero padding outside the image domain."""
        out = np.zeros_like(values, dtype=np.float64)
        for dx, dy, weight in self.taps:
            out += weight * shift_array(values, dx, dy)
        return out


def _check_background(stack: RenderingStack, B: Image) -> None:
    if not stack.matches(B):
        raise FormationError(
            f"stack is {stack.width}x{stack.height} but background is {B.width}x{B.height}"
        )
    if B.channels != 3:
        raise FormationError(f"background needs 3 channels, got {B.channels}")


def composite_array(F: np.ndarray, M: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Unclamped (1/N) sum F_i M_i + (1 - (1/N) sum M_i) B over stacked arrays."""
    return temporal_mean(F * M) + (1.0 - temporal_mean(M)) * B


def compose_subframes(stack: RenderingStack, B: Image) -> Image:
    _check_background(stack, B)
    return Image(np.clip(composite_array(stack.F, stack.M, B.data), 0.0, 1.0))


def _interpolate(stack: RenderingStack, t: float) -> Tuple[np.ndarray, np.ndarray]:
    if stack.n == 1:
        return stack.F[0], stack.M[0]
    u = t * (stack.n - 1)
    i0 = min(int(np.floor(u)), stack.n - 2)
    w = u - i0
    F_t = (1.0 - w) * stack.F[i0] + w * stack.F[i0 + 1]
    M_t = (1.0 - w) * stack.M[i0] + w * stack.M[i0 + 1]
    return F_t, M_t


def compose_instant(stack: RenderingStack, B: Image, t: float) -> Image:
    """Zero-exposure frame I_t = F_t M_t + (1 - M_t) B, F_t and M_t interpolated linearly."""
    if not 0.0 <= t <= 1.0:
        raise FormationError(f"time {t} outside [0, 1]")
    _check_background(stack, B)
    F_t, M_t = _interpolate(stack, t)
    return Image(np.clip(F_t * M_t + (1.0 - M_t) * B.data, 0.0, 1.0))


def exposure_times(l: int, epsilon: float, k: int) -> np.ndarray:
    """Midpoint-rule sample times inside [k/l, (k + epsilon)/l]."""
    if l < 1:
        raise FormationError(f"super-resolution factor must be >= 1, got {l}")
    if not 0 <= k < l:
        raise FormationError(f"frame index {k} outside [0, {l})")
    if not 0.0 < epsilon <= 1.0:
        raise FormationError(f"exposure fraction {epsilon} outside (0, 1]")
    offsets = (np.arange(EXPOSURE_SAMPLES) + 0.5) / EXPOSURE_SAMPLES
    return (k + epsilon * offsets) / l


def compose_exposure(stack: RenderingStack, B: Image, l: int, epsilon: float, k: int) -> Image:
    times = exposure_times(l, epsilon, k)
    frames = [compose_instant(stack, B, float(t)).data for t in times]
    return Image(np.clip(np.mean(frames, axis=0), 0.0, 1.0))


def compose_superres(stack: RenderingStack, B: Image, l: int, epsilon: float) -> List[Image]:
    """All l frames of the temporal super-resolution at exposure fraction epsilon."""
    return [compose_exposure(stack, B, l, epsilon, k) for k in range(l)]


def compose_blatting(F: Image, M: Image, H: BlurKernel, B: Image) -> Image:
    """I = H*F + (1 - H*M) B with F the mask-multiplied appearance (F <= M)."""
    if not H.is_normalized():
        raise FormationError(f"blur kernel sums to {H.total_weight}, expected 1")
    if not (F.same_size(M) and F.same_size(B)):
        raise FormationError("appearance, mask and background dimensions differ")
    if F.channels != B.channels or M.channels != 1:
        raise FormationError("appearance/background channels differ or mask is not single-channel")
    out = H.apply(F.data) + (1.0 - H.apply(M.data)) * B.data
    return Image(np.clip(out, 0.0, 1.0))


def compose_piecewise(
    pieces: Sequence[Tuple[Image, Image, BlurKernel]], B: Image
) -> Image:
    """Piecewise-constant model: sum_i H_i*F_i + (1 - sum_i H_i*M_i) B.

    Each piece carries its own partial kernel; together the kernels must sum
    to one, i.e. they split a single normalized trajectory.
    """
    if not pieces:
        raise FormationError("piecewise composition needs at least one piece")
    total = sum(H.total_weight for _, _, H in pieces)
    if abs(total - 1.0) > KERNEL_TOLERANCE:
        raise FormationError(f"piece kernels sum to {total}, expected 1")
    foreground = np.zeros_like(B.data)
    coverage = np.zeros(B.data.shape[:2] + (1,))
    for F, M, H in pieces:
        if not (F.same_size(B) and M.same_size(B)):
            raise FormationError("piece dimensions differ from background")
        foreground += H.apply(F.data)
        coverage += H.apply(M.data)
    return Image(np.clip(foreground + (1.0 - coverage) * B.data, 0.0, 1.0))
