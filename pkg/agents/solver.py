"""Per-image recovery of a rendering stack from a blurred frame and its background.

Projected gradient descent with momentum on alpha_I L_I + alpha_T L_T + alpha_S L_S.
A candidate step is kept only if the total energy does not increase;
otherwise the step is halved for that iteration. The raw energy gradient is
normalised by 1/(N H W); the solver multiplies it back (a constant diagonal
preconditioner) so `step` is expressed in per-pixel units.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from agents.logging_config import logger
from config.settings import InitMode, SolverConfig
from services.energy import EnergyBreakdown, Evaluation, evaluate_arrays
from services.errors import ImageError
from services.formation import compose_superres
from services.image_service import Image, RenderingStack
from services.metrics import masks_from_difference

INIT_GAIN = 3.0
INIT_NOISE = 0.01
SUPPORT_THRESHOLD = 0.1
MIN_COVERAGE = 0.05


@dataclass(frozen=True, eq=False)
class SolveResult:
    stack: RenderingStack
    history: List[EnergyBreakdown]
    iterations_run: int
    converged: bool

    @property
    def final_energy(self) -> float:
        return self.history[-1].total


def _check_pair(I: Image, B: Image) -> None:
    if not I.same_size(B):
        raise ImageError(f"input is {I.width}x{I.height} but background is {B.width}x{B.height}")
    if I.channels != 3 or B.channels != 3:
        raise ImageError("input and background need 3 channels")


def difference_mask(I: Image, B: Image) -> np.ndarray:
    """clamp(3 * max_c |I - B|, 0, 1) as an (H, W, 1) array."""
    diff = np.abs(I.data - B.data).max(axis=-1, keepdims=True)
    return np.clip(INIT_GAIN * diff, 0.0, 1.0)


def _mask_noise(seed: int, n: int, height: int, width: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-INIT_NOISE, INIT_NOISE, size=(n, height, width, 1))


def init_stack(I: Image, B: Image, n: int, seed: int = 0) -> RenderingStack:
    """Every sub-frame starts from the difference mask and F = I, masks jittered by seeded noise."""
    _check_pair(I, B)
    base = difference_mask(I, B)
    masks = np.clip(base[None] + _mask_noise(seed, n, I.height, I.width), 0.0, 1.0)
    appearance = np.broadcast_to(I.data, (n,) + I.data.shape)
    return RenderingStack(appearance, masks)


def _streak_axis(weights: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    total = weights.sum()
    mx, my = (weights * xs).sum() / total, (weights * ys).sum() / total
    cov = np.cov(np.stack([xs - mx, ys - my]), aweights=weights, bias=True)
    _, vectors = np.linalg.eigh(cov)
    axis = vectors[:, -1]
    # fix the sign so the axis never depends on eigensolver conventions
    if axis[0] < 0 or (axis[0] == 0 and axis[1] < 0):
        axis = -axis
    return np.array([mx, my]), axis


def sweep_init(I: Image, B: Image, n: int, seed: int = 0) -> RenderingStack:
    """Discs swept along the principal axis of the difference streak.

    The streak support is the thresholded difference of I against B. Its
    half-width across the principal axis gives the disc radius and the sub-frame
    centres are spread evenly between the two ends of the streak. Appearance
    is unmixed from I given the coverage the discs imply. Falls back to
    init_stack when there is no streak.
    """
    base = init_stack(I, B, n, seed)
    support = masks_from_difference([I], B, SUPPORT_THRESHOLD / INIT_GAIN)[0, ..., 0] > 0
    if support.sum() < 2:
        return base

    height, width = support.shape
    grid_y, grid_x = np.mgrid[0:height, 0:width].astype(np.float64)
    weights = difference_mask(I, B)[..., 0][support]
    center, axis = _streak_axis(weights, grid_x[support], grid_y[support])
    normal = np.array([-axis[1], axis[0]])
    along = (grid_x - center[0]) * axis[0] + (grid_y - center[1]) * axis[1]
    across = (grid_x - center[0]) * normal[0] + (grid_y - center[1]) * normal[1]

    s_min, s_max = along[support].min(), along[support].max()
    t_min, t_max = across[support].min(), across[support].max()
    radius = max((t_max - t_min) / 2.0, 0.5)
    t_mid = (t_min + t_max) / 2.0
    if s_max - s_min <= 2.0 * radius:
        centers = np.full(n, (s_min + s_max) / 2.0)
    else:
        centers = np.linspace(s_min + radius, s_max - radius, n)

    masks = np.empty((n, height, width, 1))
    for i, c in enumerate(centers):
        distance = np.hypot(along - c, across - t_mid)
        masks[i, ..., 0] = support * np.clip(radius + 0.5 - distance, 0.0, 1.0)
    coverage = masks.mean(axis=0)
    unmixed = np.clip(B.data + (I.data - B.data) / np.maximum(coverage, MIN_COVERAGE), 0.0, 1.0)
    appearance = np.where(masks > 0, unmixed[None], I.data[None])
    masks = np.clip(masks + _mask_noise(seed, n, height, width), 0.0, 1.0)
    logger.debug(
        "sweep init: radius %.2f, centres %.2f..%.2f along (%.3f, %.3f)",
        radius, centers[0], centers[-1], axis[0], axis[1],
    )
    return RenderingStack(appearance, masks)


def initial_stack(I: Image, B: Image, cfg: SolverConfig) -> RenderingStack:
    if InitMode(cfg.init_mode) is InitMode.SWEEP:
        return sweep_init(I, B, cfg.n_subframes, cfg.seed)
    return init_stack(I, B, cfg.n_subframes, cfg.seed)


class Solver:
    """One optimisation run; owns its iterate exclusively."""

    def __init__(self, I: Image, B: Image, cfg: Optional[SolverConfig] = None):
        _check_pair(I, B)
        self.I = I
        self.B = B
        self.cfg = cfg or SolverConfig()
        self.scale = 1.0

    def _evaluate(self, F, M, shifts, with_grad) -> Evaluation:
        return evaluate_arrays(
            F, M, self.I.data, self.B.data, self.cfg.weights, self.cfg.pad_fraction,
            shifts=shifts, with_grad=with_grad,
        )

    def _line_search(self, F, M, vF, vM, current: Evaluation, shifts):
        cfg = self.cfg
        gF = current.gradient.dF * self.scale
        gM = current.gradient.dM * self.scale
        dirF = cfg.momentum * vF + gF
        dirM = cfg.momentum * vM + gM
        step = cfg.step
        for _ in range(cfg.max_halvings + 1):
            cand_F = np.clip(F - step * dirF, 0.0, 1.0)
            cand_M = np.clip(M - step * dirM, 0.0, 1.0)
            candidate = self._evaluate(cand_F, cand_M, shifts, with_grad=False)
            if candidate.breakdown.total <= current.breakdown.total:
                return cand_F, cand_M, dirF, dirM, candidate
            step /= 2.0
        return None

    def run(self, init: Optional[RenderingStack] = None) -> SolveResult:
        cfg = self.cfg
        stack = init if init is not None else initial_stack(self.I, self.B, cfg)
        if not stack.matches(self.I):
            raise ImageError("initial stack dimensions differ from the input")
        F = np.clip(stack.F, 0.0, 1.0)
        M = np.clip(stack.M, 0.0, 1.0)
        frozen = cfg.shift_refresh > 1
        self.scale = float(F.shape[0] * F.shape[1] * F.shape[2])

        current = self._evaluate(F, M, None, with_grad=True)
        shifts = current.shifts if frozen else None
        history = [current.breakdown]
        vF, vM = np.zeros_like(F), np.zeros_like(M)
        stalled = 0
        converged = False
        iterations = 0
        logger.debug("==== solve start: N=%d, E0=%.6g ====", F.shape[0], current.breakdown.total)

        for iteration in range(1, cfg.max_iters + 1):
            iterations = iteration
            if frozen and iteration % cfg.shift_refresh == 0:
                current = self._evaluate(F, M, None, with_grad=True)
                shifts = current.shifts
            previous = current.breakdown.total

            accepted = self._line_search(F, M, vF, vM, current, shifts)
            if accepted is None:
                vF[:] = 0.0
                vM[:] = 0.0
            else:
                F, M, vF, vM, candidate = accepted
                grad_shifts = shifts if frozen else candidate.shifts
                gradient = self._evaluate(F, M, grad_shifts, with_grad=True).gradient
                current = Evaluation(candidate.breakdown, gradient, candidate.shifts)
            history.append(current.breakdown)
            logger.debug(
                "iter %d: total=%.8g image=%.6g time=%.6g sharp=%.6g%s",
                iteration, current.breakdown.total, current.breakdown.image,
                current.breakdown.time, current.breakdown.sharp,
                "" if accepted else " (no step accepted)",
            )

            energy = current.breakdown.total
            if energy <= 0.0:
                converged = True
                break
            decrease = (previous - energy) / max(abs(previous), 1e-300)
            stalled = stalled + 1 if decrease < cfg.rel_tol else 0
            if stalled >= cfg.patience:
                converged = True
                break

        logger.info(
            "solve finished after %d iterations (converged=%s, energy %.6g -> %.6g)",
            iterations, converged, history[0].total, history[-1].total,
        )
        return SolveResult(RenderingStack(F, M), history, iterations, converged)


def solve(
    I: Image,
    B: Image,
    cfg: Optional[SolverConfig] = None,
    init: Optional[RenderingStack] = None,
) -> SolveResult:
    return Solver(I, B, cfg).run(init)


def solve_superres(
    I: Image,
    B: Image,
    cfg: Optional[SolverConfig] = None,
    l: int = 8,
    epsilon: float = 1.0,
    result: Optional[SolveResult] = None,
) -> List[Image]:
    """l frames at exposure fraction epsilon rendered from the solved stack.

    A previously computed `result` for the same (I, B, cfg) skips the solve.
    """
    result = result or solve(I, B, cfg)
    return compose_superres(result.stack, B, l, epsilon)


def solve_with_frames(
    I: Image, B: Image, cfg: Optional[SolverConfig], l: int, epsilon: float
) -> Tuple[SolveResult, List[Image]]:
    result = solve(I, B, cfg)
    return result, solve_superres(I, B, cfg, l, epsilon, result=result)
