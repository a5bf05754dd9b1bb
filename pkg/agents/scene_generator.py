"""Procedural benchmark scenes.

A textured 2D sprite (disc or convex polygon) moves along a linear trajectory
with optional scaling (motion towards the camera) and in-plane rotation. Each
instantaneous pose is rasterized with supersampling into a ground-truth
rendering, and the blurred input is the temporal-integration composite of
those renderings over a procedural background.
"""

import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from agents.logging_config import logger
from services.errors import ImageError, SceneError
from services.formation import compose_subframes
from services.image_service import (
    Image,
    Rendering,
    RenderingStack,
    load_png,
    median_background,
    stack_times,
)
from services.metrics import extract_trajectory
from services.scene_model import (
    PROCEDURAL_BACKGROUNDS,
    BackgroundKind,
    Color,
    ObjectSpec,
    Pose,
    SceneSpec,
    SynthSample,
    Texture,
    TrajectorySpec,
)

DEFAULT_SUBFRAMES = 24
DEFAULT_SUPERSAMPLE = 4
MAX_ATTEMPTS = 100
MIN_CANVAS = 32
STRIPE_BANDS = 4
CHECKER_CELLS = 2


def _texture_colors(obj: ObjectSpec, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    c0 = np.asarray(obj.colors[0])
    c1 = np.asarray(obj.colors[-1])
    texture = Texture(obj.texture)
    if texture is Texture.UNIFORM:
        return np.broadcast_to(c0, u.shape + (3,))
    if texture is Texture.RADIAL:
        rho = np.minimum(np.hypot(u, v), 1.0)[..., None]
        return c0 + (c1 - c0) * rho
    if texture is Texture.STRIPES:
        parity = np.floor((u + 1.0) * STRIPE_BANDS / 2.0) % 2
    else:
        parity = (np.floor((u + 1.0) * CHECKER_CELLS) + np.floor((v + 1.0) * CHECKER_CELLS)) % 2
    return np.where(parity[..., None] == 0, c0, c1)


def _inside(obj: ObjectSpec, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    if obj.shape == "disc":
        return u * u + v * v <= 1.0
    pts = np.asarray(obj.vertices)
    inside = np.ones(u.shape, dtype=bool)
    for (x0, y0), (x1, y1) in zip(pts, np.roll(pts, -1, axis=0)):
        inside &= (x1 - x0) * (v - y0) - (y1 - y0) * (u - x0) >= 0.0
    return inside


def rasterize_object(
    obj: ObjectSpec,
    pose: Pose,
    canvas: Tuple[int, int],
    supersample: int = DEFAULT_SUPERSAMPLE,
) -> Rendering:
    """Coverage mask and texture colour by s x s supersampling of every pixel.

    Pixel (x, y) spans [x - 0.5, x + 0.5] x [y - 0.5, y + 0.5]; F is the mean
    colour of the covered samples and zero where nothing is covered.
    """
    width, height = canvas
    radius = obj.size * pose.scale
    if radius <= 0:
        raise SceneError("zero-size object")
    offsets = (np.arange(supersample) + 0.5) / supersample - 0.5
    xs = (np.arange(width)[:, None] + offsets[None, :]).reshape(1, 1, width, supersample)
    ys = (np.arange(height)[:, None] + offsets[None, :]).reshape(height, supersample, 1, 1)
    dx, dy = xs - pose.center[0], ys - pose.center[1]
    theta = math.radians(pose.angle)
    u = (math.cos(theta) * dx + math.sin(theta) * dy) / radius
    v = (-math.sin(theta) * dx + math.cos(theta) * dy) / radius

    covered = _inside(obj, u, v)
    mask = covered.mean(axis=(1, 3))
    premultiplied = (_texture_colors(obj, u, v) * covered[..., None]).mean(axis=(1, 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        appearance = np.where(mask[..., None] > 0, premultiplied / mask[..., None], 0.0)
    if not mask.any():
        logger.warning("object at %s lies entirely off the %dx%d canvas", pose.center, width, height)
    return Rendering(Image(np.clip(appearance, 0.0, 1.0)), Image(mask))


def _value_noise(rng: np.random.Generator, width: int, height: int, octaves=(4, 8, 16)) -> np.ndarray:
    total = np.zeros((height, width))
    amplitude = 1.0
    for cells in octaves:
        grid = rng.uniform(size=(cells + 1, cells + 1))
        rows = np.linspace(0, cells, height)
        cols = np.linspace(0, cells, width)
        coords = np.meshgrid(rows, cols, indexing="ij")
        total += amplitude * ndimage.map_coordinates(grid, coords, order=1)
        amplitude /= 2.0
    span = total.max() - total.min()
    return (total - total.min()) / span if span > 0 else np.zeros_like(total)


def make_background(
    rng_seed: int,
    canvas: Tuple[int, int],
    kind: str = BackgroundKind.NOISE.value,
    colors: Optional[Sequence[Color]] = None,
    path: Optional[str] = None,
) -> Image:
    """Deterministic 3-channel background.

    uniform: colors[0]; gradient: colors[0] at x = 0 to colors[1] at
    x = width - 1; noise: value noise tinted between two colours; image:
    the PNG at `path` resampled to the canvas.
    """
    width, height = canvas
    kind = BackgroundKind(kind)
    rng = np.random.default_rng(rng_seed)
    palette = np.asarray(colors, dtype=np.float64) if colors is not None else rng.uniform(size=(2, 3))
    if palette.ndim == 1:
        palette = palette[None, :]
    c0, c1 = palette[0], palette[-1]

    if kind is BackgroundKind.UNIFORM:
        data = np.broadcast_to(c0, (height, width, 3))
    elif kind is BackgroundKind.GRADIENT:
        ramp = np.arange(width) / (width - 1) if width > 1 else np.zeros(1)
        data = np.broadcast_to(c0 + (c1 - c0) * ramp[:, None], (height, width, 3))
    elif kind is BackgroundKind.NOISE:
        data = c0 + (c1 - c0) * _value_noise(rng, width, height)[..., None]
    else:
        if not path:
            raise SceneError("image background needs a file path")
        try:
            source = load_png(path)
        except ImageError as exc:
            raise SceneError(f"background image unavailable: {exc}") from exc
        pixels = source.data[..., :3] if source.channels >= 3 else np.repeat(source.data, 3, axis=-1)
        zoom = (height / source.height, width / source.width, 1.0)
        data = ndimage.zoom(pixels, zoom, order=1, grid_mode=False)[:height, :width]
    return Image(np.clip(data, 0.0, 1.0))


def make_background_sequence(
    rng_seed: int,
    canvas: Tuple[int, int],
    kind: str = BackgroundKind.NOISE.value,
    n_frames: int = 6,
    jitter: float = 0.05,
    colors: Optional[Sequence[Color]] = None,
) -> List[Image]:
    """Background frames with per-frame brightness jitter (a cheap dynamic scene)."""
    base = make_background(rng_seed, canvas, kind, colors=colors)
    rng = np.random.default_rng([rng_seed, 1])
    gains = 1.0 + rng.uniform(-jitter, jitter, size=n_frames)
    return [Image(np.clip(base.data * gain, 0.0, 1.0)) for gain in gains]


def _random_convex_polygon(rng: np.random.Generator) -> Tuple[Tuple[float, float], ...]:
    count = int(rng.integers(3, 11))
    for _ in range(20):
        angles = np.sort(rng.uniform(0.0, 2.0 * math.pi, size=count))
        gaps = np.diff(np.concatenate([angles, [angles[0] + 2.0 * math.pi]]))
        if gaps.max() < math.pi and gaps.min() > 1e-3:
            break
    else:
        angles = np.arange(count) * 2.0 * math.pi / count
    return tuple((float(math.cos(a)), float(math.sin(a))) for a in angles)


def sample_object(rng: np.random.Generator, canvas: Tuple[int, int]) -> ObjectSpec:
    short = min(canvas)
    size = float(rng.uniform(0.06, 0.12) * short)
    texture = Texture(list(Texture)[int(rng.integers(len(Texture)))]).value
    colors = tuple(tuple(float(c) for c in rng.uniform(size=3)) for _ in range(2))
    if rng.random() < 0.3:
        return ObjectSpec("disc", size, texture, colors)
    return ObjectSpec("polygon", size, texture, colors, _random_convex_polygon(rng))


def sample_trajectory(
    rng: np.random.Generator, obj: ObjectSpec, canvas: Tuple[int, int]
) -> Optional[TrajectorySpec]:
    """Linear trajectory with displacement 0.5-2 object diameters, or None if it cannot fit."""
    width, height = canvas
    magnitude = rng.uniform(0.5, 2.0) * 2.0 * obj.size
    heading = rng.uniform(0.0, 2.0 * math.pi)
    dx, dy = magnitude * math.cos(heading), magnitude * math.sin(heading)
    scale_rate = float(rng.uniform(1.0, 1.2))
    rotation = float(rng.uniform(-30.0, 30.0))
    extent = obj.size * scale_rate + 1.5
    x_lo, x_hi = extent - min(0.0, dx), width - 1 - extent - max(0.0, dx)
    y_lo, y_hi = extent - min(0.0, dy), height - 1 - extent - max(0.0, dy)
    if x_lo > x_hi or y_lo > y_hi:
        return None
    start = (float(rng.uniform(x_lo, x_hi)), float(rng.uniform(y_lo, y_hi)))
    return TrajectorySpec(start, (dx, dy), scale_rate, rotation)


def sample_specs(rng_seed: int, canvas: Tuple[int, int]) -> Tuple[ObjectSpec, TrajectorySpec]:
    if min(canvas) < MIN_CANVAS:
        raise SceneError(f"canvas {canvas} smaller than {MIN_CANVAS}x{MIN_CANVAS}")
    rng = np.random.default_rng(rng_seed)
    for attempt in range(MAX_ATTEMPTS):
        obj = sample_object(rng, canvas)
        trajectory = sample_trajectory(rng, obj, canvas)
        if trajectory is not None:
            if attempt:
                logger.debug("seed %s: trajectory fitted after %d resamples", rng_seed, attempt)
            return obj, trajectory
    raise SceneError(f"object leaves the canvas for seed {rng_seed} after {MAX_ATTEMPTS} attempts")


def render_stack(
    obj: ObjectSpec,
    trajectory: TrajectorySpec,
    canvas: Tuple[int, int],
    n_subframes: int = DEFAULT_SUBFRAMES,
    supersample: int = DEFAULT_SUPERSAMPLE,
) -> RenderingStack:
    """Zero-exposure renderings at the stack times of n_subframes."""
    return RenderingStack.from_renderings(
        [
            rasterize_object(obj, trajectory.pose_at(float(t)), canvas, supersample)
            for t in stack_times(n_subframes)
        ]
    )


def render_scene(
    obj: ObjectSpec,
    trajectory: TrajectorySpec,
    background: Image,
    n_subframes: int = DEFAULT_SUBFRAMES,
    seed: int = 0,
    background_kind: str = BackgroundKind.NOISE.value,
    supersample: int = DEFAULT_SUPERSAMPLE,
    gt_stack: Optional[RenderingStack] = None,
) -> SynthSample:
    stack = gt_stack if gt_stack is not None else render_stack(obj, trajectory, background.size, n_subframes, supersample)
    return SynthSample(
        I=compose_subframes(stack, background),
        B=background,
        gt_stack=stack,
        gt_traj=extract_trajectory(stack),
        spec=SceneSpec(obj, trajectory, int(seed), background_kind),
    )


def _background_seed(rng_seed: int, salt: int = 0) -> int:
    return int(np.random.default_rng([rng_seed, 7, salt]).integers(2 ** 31))


def sample_scene(
    rng_seed: int,
    canvas: Tuple[int, int] = (64, 64),
    n_subframes: int = DEFAULT_SUBFRAMES,
    background_kind: Optional[str] = None,
    dynamic_background: bool = False,
    jitter: float = 0.05,
    supersample: int = DEFAULT_SUPERSAMPLE,
) -> SynthSample:
    """Deterministic synthetic sample for a seed."""
    if n_subframes < 1:
        raise SceneError("n_subframes must be >= 1")
    obj, trajectory = sample_specs(rng_seed, canvas)
    bg_seed = _background_seed(rng_seed)
    if background_kind is None:
        choice = np.random.default_rng([rng_seed, 11]).integers(len(PROCEDURAL_BACKGROUNDS))
        background_kind = PROCEDURAL_BACKGROUNDS[int(choice)].value

    if not dynamic_background:
        background = make_background(bg_seed, canvas, background_kind)
        return render_scene(
            obj, trajectory, background, n_subframes, rng_seed, background_kind, supersample
        )

    frames = make_background_sequence(bg_seed, canvas, background_kind, n_frames=6, jitter=jitter)
    current = frames[-1]
    sample = render_scene(obj, trajectory, current, n_subframes, rng_seed, background_kind, supersample)
    return SynthSample(
        I=sample.I,
        B=median_background(frames[:-1]),
        gt_stack=sample.gt_stack,
        gt_traj=sample.gt_traj,
        spec=SceneSpec(obj, trajectory, int(rng_seed), background_kind, dynamic_background=True),
        background_true=current,
    )


def sample_scene_pair(
    rng_seed: int,
    canvas: Tuple[int, int] = (64, 64),
    n_subframes: int = DEFAULT_SUBFRAMES,
    kinds: Tuple[str, str] = (BackgroundKind.NOISE.value, BackgroundKind.GRADIENT.value),
) -> Tuple[SynthSample, SynthSample]:
    """The same object and trajectory composed over two different backgrounds."""
    obj, trajectory = sample_specs(rng_seed, canvas)
    stack = render_stack(obj, trajectory, canvas, n_subframes)
    samples = []
    for salt, kind in enumerate(kinds):
        background = make_background(_background_seed(rng_seed, salt + 1), canvas, kind)
        samples.append(render_scene(obj, trajectory, background, n_subframes, rng_seed, kind, gt_stack=stack))
    return samples[0], samples[1]
