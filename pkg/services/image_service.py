"""Pixel containers, image arithmetic, PNG I/O and background estimation.

Every image is a float64 raster laid out as (height, width, channels) with
nominal range [0, 1]. Containers copy their input and freeze it, so they can
be shared between worker threads without locking.
"""

import logging
import os
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from services.errors import ImageError

logger = logging.getLogger("fmo.image")

SUPPORTED_CHANNELS = (1, 3, 4)
_MAX_CODE = {8: 255, 16: 65535}


def _frozen(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Image:
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[..., None]
        if arr.ndim != 3:
            raise ImageError(f"image must be 2-D or 3-D, got shape {arr.shape}")
        height, width, channels = arr.shape
        if height < 1 or width < 1:
            raise ImageError(f"empty image of shape {arr.shape}")
        if channels not in SUPPORTED_CHANNELS:
            raise ImageError(f"unsupported channel count {channels}")
        if not np.all(np.isfinite(arr)):
            raise ImageError("non-finite pixel")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def size(self) -> Tuple[int, int]:
        """(width, height), the order used for canvases."""
        return self.width, self.height

    @classmethod
    def full(cls, width: int, height: int, channels: int = 3, value: float = 0.0) -> "Image":
        return cls(np.full((height, width, channels), value, dtype=np.float64))

    def same_size(self, other: "Image") -> bool:
        return self.data.shape[:2] == other.data.shape[:2]


@dataclass(frozen=True, eq=False)
class Rendering:
    """Sharp appearance F (3 channels) and mask M (1 channel) at one instant."""

    F: Image
    M: Image

    def __post_init__(self):
        if self.F.channels != 3:
            raise ImageError(f"appearance needs 3 channels, got {self.F.channels}")
        if self.M.channels != 1:
            raise ImageError(f"mask needs 1 channel, got {self.M.channels}")
        if not self.F.same_size(self.M):
            raise ImageError("appearance and mask dimensions differ")
        for name, img in (("F", self.F), ("M", self.M)):
            if img.data.min() < 0.0 or img.data.max() > 1.0:
                raise ImageError(f"rendering {name} values outside [0, 1]")

    def joint(self) -> np.ndarray:
        """F concatenated with M as one (H, W, 4) signal."""
        return np.concatenate([self.F.data, self.M.data], axis=-1)


@dataclass(frozen=True, eq=False)
class RenderingStack:
    """N renderings sampled at t_i = i / (N - 1); a single rendering sits at t = 0.5.

    Arrays are stored stacked, F as (N, H, W, 3) and M as (N, H, W, 1). Values
    are expected in [0, 1]; only finiteness is enforced here so optimisers and
    gradient checks can hand over raw iterates.
    """

    F: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        F = np.array(self.F, dtype=np.float64, copy=True)
        M = np.array(self.M, dtype=np.float64, copy=True)
        if M.ndim == 3:
            M = M[..., None]
        if F.ndim != 4 or F.shape[-1] != 3:
            raise ImageError(f"stack appearance must be (N, H, W, 3), got {F.shape}")
        if M.ndim != 4 or M.shape[-1] != 1:
            raise ImageError(f"stack mask must be (N, H, W, 1), got {M.shape}")
        if F.shape[:3] != M.shape[:3]:
            raise ImageError("all renderings must share dimensions")
        if F.shape[0] < 1:
            raise ImageError("rendering stack is empty")
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(M))):
            raise ImageError("non-finite pixel")
        F.setflags(write=False)
        M.setflags(write=False)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "M", M)

    @classmethod
    def from_renderings(cls, renderings: Sequence[Rendering]) -> "RenderingStack":
        if not renderings:
            raise ImageError("rendering stack is empty")
        return cls(
            np.stack([r.F.data for r in renderings]),
            np.stack([r.M.data for r in renderings]),
        )

    @classmethod
    def constant(cls, rendering: Rendering, n: int) -> "RenderingStack":
        return cls.from_renderings([rendering] * n)

    @property
    def n(self) -> int:
        return self.F.shape[0]

    @property
    def height(self) -> int:
        return self.F.shape[1]

    @property
    def width(self) -> int:
        return self.F.shape[2]

    @property
    def times(self) -> np.ndarray:
        return stack_times(self.n)

    @property
    def renderings(self) -> List[Rendering]:
        return [self[i] for i in range(self.n)]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, index: int) -> Rendering:
        return Rendering(Image(self.F[index]), Image(self.M[index]))

    def joint(self) -> np.ndarray:
        """(N, H, W, 4) array of F concatenated with M."""
        return np.concatenate([self.F, self.M], axis=-1)

    def reversed(self) -> "RenderingStack":
        return RenderingStack(self.F[::-1], self.M[::-1])

    def matches(self, img: Image) -> bool:
        return (self.height, self.width) == (img.height, img.width)


def stack_times(n: int) -> np.ndarray:
    if n < 1:
        raise ImageError("rendering stack is empty")
    if n == 1:
        return np.array([0.5])
    return np.arange(n, dtype=np.float64) / (n - 1)


def temporal_mean(values: np.ndarray) -> np.ndarray:
    """Mean over axis 0, summed in mirrored pairs (i, N-1-i).

    Reversing the input gives a bit-identical result, which keeps every
    time-reversal invariant exact rather than approximate.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    half = n // 2
    total = (values[:half] + values[::-1][:half]).sum(axis=0)
    if n % 2:
        total = total + values[half]
    return total / n


def shift_array(arr: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate content by (dx, dy) pixels: out[y, x] = arr[y - dy, x - dx], zero fill."""
    out = np.zeros_like(arr)
    h, w = arr.shape[:2]
    if abs(dx) >= w or abs(dy) >= h:
        return out
    ys_dst = slice(max(dy, 0), h + min(dy, 0))
    xs_dst = slice(max(dx, 0), w + min(dx, 0))
    ys_src = slice(max(-dy, 0), h + min(-dy, 0))
    xs_src = slice(max(-dx, 0), w + min(-dx, 0))
    out[ys_dst, xs_dst] = arr[ys_src, xs_src]
    return out


def clamp01(img: Union[Image, np.ndarray]) -> Image:
    if not isinstance(img, Image):
        img = Image(img)
    return Image(np.clip(img.data, 0.0, 1.0))


def median_background(frames: Iterable[Image]) -> Image:
    """Per-pixel, per-channel median; an even count averages the two middle values."""
    frames = list(frames)
    if not frames:
        raise ImageError("median_background needs at least one frame")
    first = frames[0]
    for frame in frames[1:]:
        if frame.data.shape != first.data.shape:
            raise ImageError(
                f"frame dimensions differ: {frame.data.shape} vs {first.data.shape}"
            )
    return Image(np.median(np.stack([f.data for f in frames]), axis=0))


def load_png(path: Union[str, os.PathLike]) -> Image:
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
                mode = im.mode
            elif mode == "1":
                im = im.convert("L")
                mode = "L"
            codes = np.asarray(im)
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageError(f"unreadable PNG {path}: {exc}") from exc

    if mode.startswith("I"):
        max_code = _MAX_CODE[16]
    elif mode in ("L", "RGB", "RGBA"):
        max_code = _MAX_CODE[8]
    else:
        raise ImageError(f"unsupported PNG mode {mode} in {path}")
    return Image(codes.astype(np.float64) / max_code)


def save_png(img: Image, path: Union[str, os.PathLike], bit_depth: int = 8) -> None:
    if bit_depth not in _MAX_CODE:
        raise ImageError(f"unsupported bit depth {bit_depth}")
    data = img.data
    if data.min() < 0.0 or data.max() > 1.0:
        raise ImageError(f"values outside [0, 1] cannot be saved to {path}")
    max_code = _MAX_CODE[bit_depth]
    codes = np.round(data * max_code)

    if bit_depth == 16:
        if img.channels != 1:
            raise ImageError("16-bit PNG output is limited to single-channel images")
        pil = PILImage.fromarray(codes[..., 0].astype(np.uint16))
    elif img.channels == 1:
        pil = PILImage.fromarray(codes[..., 0].astype(np.uint8))
    else:
        pil = PILImage.fromarray(codes.astype(np.uint8))

    directory = os.path.dirname(os.fspath(path))
    if directory:
        os.makedirs(directory, exist_ok=True)
    pil.save(path, format="PNG")
    logger.debug("saved %s (%dx%dx%d, %d-bit)", path, img.width, img.height, img.channels, bit_depth)
