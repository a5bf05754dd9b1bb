"""Maximum zero-normalized cross-correlation over a bounded set of integer shifts.

The two renderings are treated as one joint 4-channel signal (F next to M)
with a single mean and variance per shift. The local sums and the cross term
are full correlations computed with `scipy.signal.fftconvolve` and cropped to
the search window, so the whole shift surface costs a few transforms.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import signal

from services.errors import EnergyError
from services.image_service import Rendering

DEFAULT_PAD_FRACTION = 0.10
DEGENERATE_VARIANCE = 1e-12
DEGENERATE_MEAN_GAP = 1e-9
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class NccMatch:
    value: float
    shift: Tuple[int, int]


def shift_bounds(height: int, width: int, pad_fraction: float) -> Tuple[int, int]:
    """Largest |dx|, |dy| searched: ceil(pad * size) per axis."""
    return math.ceil(pad_fraction * width - 1e-9), math.ceil(pad_fraction * height - 1e-9)


def _correlate(a: np.ndarray, b: np.ndarray, px: int, py: int) -> np.ndarray:
    """sum over y, x, c of a[y, x, c] * b[y + dy, x + dx, c], indexed [dy, dx]."""
    height, width = a.shape[:2]
    full = signal.fftconvolve(b, a[::-1, ::-1], mode="full", axes=(0, 1))
    full = np.pad(full, ((py, py), (px, px), (0, 0)))
    return full[height - 1:height + 2 * py, width - 1:width + 2 * px].sum(axis=-1)


def _degenerate_ncc(var_a, var_b, mean_a, mean_b):
    flat_a = var_a < DEGENERATE_VARIANCE
    flat_b = var_b < DEGENERATE_VARIANCE
    both = flat_a & flat_b
    same = np.abs(mean_a - mean_b) < DEGENERATE_MEAN_GAP
    return flat_a | flat_b, np.where(both & same, 1.0, 0.0)


def ncc_surface(a: np.ndarray, b: np.ndarray, pad_fraction: float = DEFAULT_PAD_FRACTION):
    """NCC of a against b shifted by every (dx, dy) in the search window.

    Shift (dx, dy) pairs a[y, x] with b[y + dy, x + dx] over their overlap.
    Returns (values, dxs, dys) with values indexed [dy, dx]; shifts without
    overlap hold -inf.
    """
    if a.shape != b.shape:
        raise EnergyError(f"ncc arrays differ in shape: {a.shape} vs {b.shape}")
    height, width, channels = a.shape
    px, py = shift_bounds(height, width, pad_fraction)
    dxs = np.arange(-px, px + 1)
    dys = np.arange(-py, py + 1)

    rows = np.maximum(np.minimum(height, height - dys) - np.maximum(0, -dys), 0)
    cols = np.maximum(np.minimum(width, width - dxs) - np.maximum(0, -dxs), 0)
    count = rows[:, None] * cols[None, :] * channels

    ones = np.ones((height, width, 1))
    sum_a = _correlate(a.sum(axis=-1, keepdims=True), ones, px, py)
    sq_a = _correlate((a * a).sum(axis=-1, keepdims=True), ones, px, py)
    sum_b = _correlate(ones, b.sum(axis=-1, keepdims=True), px, py)
    sq_b = _correlate(ones, (b * b).sum(axis=-1, keepdims=True), px, py)
    cross = _correlate(a, b, px, py)

    with np.errstate(divide="ignore", invalid="ignore"):
        n = np.where(count > 0, count, 1)
        mean_a, mean_b = sum_a / n, sum_b / n
        var_a = np.maximum(sq_a / n - mean_a ** 2, 0.0)
        var_b = np.maximum(sq_b / n - mean_b ** 2, 0.0)
        cov = cross / n - mean_a * mean_b
        values = cov / np.sqrt(var_a * var_b)
    degenerate, fallback = _degenerate_ncc(var_a, var_b, mean_a, mean_b)
    values = np.where(degenerate, fallback, np.clip(values, -1.0, 1.0))
    values = np.where(count > 0, values, -np.inf)
    return values, dxs, dys


def _shift_order(dxs: np.ndarray, dys: np.ndarray) -> np.ndarray:
    """Flat indices of the [dy, dx] grid sorted by |shift|, then (dx, dy)."""
    gx, gy = np.meshgrid(dxs, dys)
    return np.lexsort((gy.ravel(), gx.ravel(), (gx ** 2 + gy ** 2).ravel()))


def _best_match(values: np.ndarray, dxs: np.ndarray, dys: np.ndarray) -> NccMatch:
    best = values.max()
    flat = values.ravel()
    order = _shift_order(dxs, dys)
    winner = order[np.argmax(flat[order] >= best - TIE_TOLERANCE)]
    iy, ix = np.unravel_index(winner, values.shape)
    return NccMatch(float(best), (int(dxs[ix]), int(dys[iy])))


def maxncc_arrays(a: np.ndarray, b: np.ndarray, pad_fraction: float = DEFAULT_PAD_FRACTION) -> NccMatch:
    return _best_match(*ncc_surface(a, b, pad_fraction))


def maxncc(R_a: Rendering, R_b: Rendering, pad_fraction: float = DEFAULT_PAD_FRACTION) -> NccMatch:
    if not R_a.F.same_size(R_b.F):
        raise EnergyError("renderings differ in size")
    return maxncc_arrays(R_a.joint(), R_b.joint(), pad_fraction)


def pair_maxncc(a: np.ndarray, b: np.ndarray, pad_fraction: float = DEFAULT_PAD_FRACTION) -> NccMatch:
    """maxncc with the surface computed in a canonical order.

    The value is bit-identical for (a, b) and (b, a). The surface of the
    swapped pair is mirrored back, so the shift and its tie-break are those
    of a against b.
    """
    if a.tobytes() <= b.tobytes():
        return maxncc_arrays(a, b, pad_fraction)
    values, dxs, dys = ncc_surface(b, a, pad_fraction)
    return _best_match(values[::-1, ::-1], dxs, dys)


def overlap_slices(height: int, width: int, dx: int, dy: int):
    ya = slice(max(0, -dy), min(height, height - dy))
    xa = slice(max(0, -dx), min(width, width - dx))
    yb = slice(ya.start + dy, ya.stop + dy)
    xb = slice(xa.start + dx, xa.stop + dx)
    return (ya, xa), (yb, xb)


def ncc_at_shift(a: np.ndarray, b: np.ndarray, shift: Tuple[int, int], with_grad: bool = True):
    """NCC at one fixed shift and, optionally, its gradient w.r.t. a and b.

    Gradients are zero outside the overlap and wherever the correlation is
    degenerate (flat signal), matching the piecewise-constant fallback.
    """
    dx, dy = shift
    height, width = a.shape[:2]
    (ya, xa), (yb, xb) = overlap_slices(height, width, dx, dy)
    ra, rb = a[ya, xa], b[yb, xb]
    grad_a: Optional[np.ndarray] = np.zeros_like(a) if with_grad else None
    grad_b: Optional[np.ndarray] = np.zeros_like(b) if with_grad else None
    if ra.size == 0:
        return -math.inf, grad_a, grad_b

    n = ra.size
    ca, cb = ra - ra.mean(), rb - rb.mean()
    norm_a, norm_b = math.sqrt(float((ca * ca).sum())), math.sqrt(float((cb * cb).sum()))
    var_a, var_b = norm_a ** 2 / n, norm_b ** 2 / n
    degenerate, fallback = _degenerate_ncc(
        np.array(var_a), np.array(var_b), np.array(ra.mean()), np.array(rb.mean())
    )
    if bool(degenerate):
        return float(fallback), grad_a, grad_b

    value = float((ca * cb).sum()) / (norm_a * norm_b)
    if with_grad:
        grad_a[ya, xa] = (cb / norm_b - value * ca / norm_a) / norm_a
        grad_b[yb, xb] = (ca / norm_a - value * cb / norm_b) / norm_b
    return min(max(value, -1.0), 1.0), grad_a, grad_b
