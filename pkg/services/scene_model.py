"""Scene records shared by the generator and the dataset layout."""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from services.errors import SceneError
from services.image_service import Image, RenderingStack
from services.metrics import Trajectory

Color = Tuple[float, float, float]


class Texture(str, Enum):
    UNIFORM = "uniform"
    STRIPES = "stripes"
    CHECKER = "checker"
    RADIAL = "radial"


class BackgroundKind(str, Enum):
    UNIFORM = "uniform"
    GRADIENT = "gradient"
    NOISE = "noise"
    IMAGE = "image"


PROCEDURAL_BACKGROUNDS = (BackgroundKind.UNIFORM, BackgroundKind.GRADIENT, BackgroundKind.NOISE)


def _signed_area(vertices: Sequence[Tuple[float, float]]) -> float:
    pts = np.asarray(vertices, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@dataclass(frozen=True)
class ObjectSpec:
    """Sprite shape in unit coordinates, scaled by `size` (object radius in pixels)."""

    shape: str
    size: float
    texture: str = Texture.UNIFORM.value
    colors: Tuple[Color, ...] = ((1.0, 1.0, 1.0),)
    vertices: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.shape not in ("disc", "polygon"):
            raise SceneError(f"unknown shape {self.shape!r}")
        if not math.isfinite(self.size) or self.size < 0:
            raise SceneError(f"object size must be finite and >= 0, got {self.size}")
        Texture(self.texture)
        colors = tuple(tuple(float(c) for c in color) for color in self.colors)
        if not 1 <= len(colors) <= 2 or any(len(c) != 3 for c in colors):
            raise SceneError("objects carry one or two RGB colours")
        if any(not 0.0 <= c <= 1.0 for color in colors for c in color):
            raise SceneError("colours must lie in [0, 1]")
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "texture", Texture(self.texture).value)

        if self.shape == "polygon":
            vertices = tuple((float(x), float(y)) for x, y in self.vertices)
            if not 3 <= len(vertices) <= 10:
                raise SceneError(f"polygon needs 3-10 vertices, got {len(vertices)}")
            if _signed_area(vertices) < 0:
                vertices = vertices[::-1]
            if _signed_area(vertices) <= 1e-9:
                raise SceneError("degenerate polygon (zero area)")
            pts = np.asarray(vertices)
            edges = np.roll(pts, -1, axis=0) - pts
            turns = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(edges, -1, axis=0)[:, 0]
            if np.any(turns < -1e-12):
                raise SceneError("polygon is not convex")
            object.__setattr__(self, "vertices", vertices)


@dataclass(frozen=True)
class Pose:
    center: Tuple[float, float]
    scale: float = 1.0
    angle: float = 0.0


@dataclass(frozen=True)
class TrajectorySpec:
    """Linear motion over t in [0, 1]; scale and rotation change linearly with t."""

    start: Tuple[float, float]
    displacement: Tuple[float, float]
    scale_rate: float = 1.0
    rotation: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(float(v) for v in self.start))
        object.__setattr__(self, "displacement", tuple(float(v) for v in self.displacement))

    def pose_at(self, t: float) -> Pose:
        x = self.start[0] + t * self.displacement[0]
        y = self.start[1] + t * self.displacement[1]
        return Pose((x, y), 1.0 + t * (self.scale_rate - 1.0), t * self.rotation)

    @property
    def magnitude(self) -> float:
        return math.hypot(*self.displacement)


@dataclass(frozen=True)
class SceneSpec:
    object: ObjectSpec
    trajectory: TrajectorySpec
    seed: int
    background: str = BackgroundKind.NOISE.value
    dynamic_background: bool = False


@dataclass(frozen=True, eq=False)
class SynthSample:
    """One benchmark instance.

    `B` is the background handed to methods. With a dynamic background it is
    the median of the previous frames and `background_true` holds the frame
    the input was actually composed over.
    """

    I: Image
    B: Image
    gt_stack: RenderingStack
    gt_traj: Trajectory
    spec: SceneSpec
    background_true: Optional[Image] = None

    @property
    def canvas(self) -> Tuple[int, int]:
        return self.I.width, self.I.height
