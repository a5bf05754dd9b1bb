"""Image-quality and trajectory metrics: PSNR, SSIM, centre-of-mass trajectories, TIoU."""

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from skimage.metrics import structural_similarity

from services.errors import MetricError
from services.image_service import Image, RenderingStack

PSNR_CAP_DB = 100.0
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
ABSENT_MASS = 1e-6


def _check_pair(A: Image, B: Image) -> None:
    if A.data.shape != B.data.shape:
        raise MetricError(f"image shapes differ: {A.data.shape} vs {B.data.shape}")


def psnr(A: Image, B: Image) -> float:
    _check_pair(A, B)
    mse = float(np.mean((A.data - B.data) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def ssim(A: Image, B: Image) -> float:
    """Gaussian-windowed SSIM (11x11, sigma 1.5, dynamic range 1), channel-averaged."""
    _check_pair(A, B)
    if min(A.height, A.width) < SSIM_WINDOW:
        raise MetricError(
            f"image {A.width}x{A.height} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )
    a, b = A.data, B.data
    kwargs = dict(
        data_range=1.0,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
    )
    if A.channels == 1:
        return float(structural_similarity(a[..., 0], b[..., 0], **kwargs))
    return float(structural_similarity(a, b, channel_axis=-1, **kwargs))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Object centres (x = column, y = row) at strictly increasing times in [0, 1]."""

    times: np.ndarray
    centers: np.ndarray
    present: np.ndarray = None
    radius: Optional[float] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        if len(times) != len(centers):
            raise MetricError("trajectory times and centres differ in length")
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            raise MetricError("trajectory times must be strictly increasing")
        if len(times) and (times[0] < 0.0 or times[-1] > 1.0):
            raise MetricError("trajectory times outside [0, 1]")
        present = (
            np.ones(len(times), dtype=bool)
            if self.present is None
            else np.asarray(self.present, dtype=bool).reshape(-1)
        )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "present", present)

    def __len__(self) -> int:
        return len(self.times)

    def reversed(self) -> "Trajectory":
        """Same path traversed backwards in time (t -> 1 - t)."""
        return Trajectory(1.0 - self.times[::-1], self.centers[::-1], self.present[::-1], self.radius)

    def resample(self, times: np.ndarray) -> "Trajectory":
        """Linear interpolation of the present points onto new times.

        A new time that coincides with a sample keeps that sample's presence;
        otherwise it is present only when both bracketing samples are.
        """
        times = np.asarray(times, dtype=np.float64)
        if len(times) == len(self.times) and np.allclose(times, self.times, atol=1e-12):
            return self
        keep = self.present
        if not keep.any():
            return Trajectory(times, np.zeros((len(times), 2)), np.zeros(len(times), bool), self.radius)
        xs = np.interp(times, self.times[keep], self.centers[keep, 0])
        ys = np.interp(times, self.times[keep], self.centers[keep, 1])
        last = len(self.times) - 1
        index = np.searchsorted(self.times, times, side="left")
        right = np.clip(index, 0, last)
        left = np.clip(index - 1, 0, last)
        exact = np.isclose(self.times[right], times, rtol=0.0, atol=1e-12)
        present = np.where(exact, keep[right], keep[left] & keep[right])
        return Trajectory(times, np.stack([xs, ys], axis=1), present, self.radius)


def extract_trajectory(stack: RenderingStack) -> Trajectory:
    """Centre of mass of every mask; sub-frames with (almost) no mass are absent."""
    masses = stack.M.reshape(stack.n, -1).sum(axis=1)
    present = masses >= ABSENT_MASS
    if not present.any():
        raise MetricError("no object")
    centers = np.zeros((stack.n, 2))
    for i in np.flatnonzero(present):
        row, col = ndimage.center_of_mass(stack.M[i, ..., 0])
        centers[i] = (col, row)
    radius = float(np.mean(np.sqrt(masses[present] / math.pi)))
    return Trajectory(stack.times, centers, present, radius)


def disc_iou(distance: float, radius: float) -> float:
    """IoU of two discs of equal radius whose centres are `distance` apart."""
    if radius <= 0:
        raise MetricError(f"disc radius must be positive, got {radius}")
    if distance >= 2.0 * radius:
        return 0.0
    r2 = radius * radius
    lens = 2.0 * r2 * math.acos(distance / (2.0 * radius)) - 0.5 * distance * math.sqrt(
        4.0 * r2 - distance * distance
    )
    return lens / (2.0 * math.pi * r2 - lens)


def tiou(est: Trajectory, gt: Trajectory, radius: Optional[float] = None) -> float:
    """Disc IoU at every ground-truth time, averaged; absent estimates count as 0."""
    if len(gt) == 0 or not gt.present.any():
        raise MetricError("empty ground-truth trajectory")
    radius = radius if radius is not None else gt.radius
    if radius is None:
        raise MetricError("ground-truth trajectory carries no radius")
    est = est.resample(gt.times)
    scores = []
    for i in np.flatnonzero(gt.present):
        if not est.present[i]:
            scores.append(0.0)
            continue
        distance = float(np.hypot(*(est.centers[i] - gt.centers[i])))
        scores.append(disc_iou(distance, radius))
    return float(np.mean(scores))


def masks_from_difference(frames: Sequence[Image], B: Image, threshold: float = 0.1) -> np.ndarray:
    """Ground-truth masks as thresholded difference images |frame - B| (max over channels)."""
    masks = []
    for frame in frames:
        if frame.data.shape != B.data.shape:
            raise MetricError("frame and background shapes differ")
        diff = np.abs(frame.data - B.data).max(axis=-1, keepdims=True)
        masks.append((diff > threshold).astype(np.float64))
    return np.stack(masks)
