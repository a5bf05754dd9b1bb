"""Self-check suite: analytic gradients, formation equivalence, metric oracles, reversal invariance.

Each family returns CheckResult records; `run_checks` strings them together for
the `check` command. Families marked informational are reported but never
fail the suite.
"""

import asyncio
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from agents.evaluator import evaluate
from agents.logging_config import logger
from agents.scene_generator import sample_scene, sample_scene_pair
from agents.solver import solve
from config.settings import SolverConfig
from services import energy
from services.formation import BlurKernel, compose_blatting, compose_piecewise, compose_subframes
from services.image_service import Image, RenderingStack, shift_array
from services.metrics import Trajectory, disc_iou, psnr, ssim, tiou
from services.ncc import maxncc_arrays, ncc_at_shift, shift_bounds

FD_STEP = 1e-4
GRADIENT_TOLERANCE = 1e-3
KINK_MARGIN = 1e-3
EXACT_TOLERANCE = 1e-9
TIOU_TOLERANCE = 1e-3
BACKGROUND_TOLERANCE = 0.1
SSIM_C1 = 0.01 ** 2


@dataclass(frozen=True)
class CheckResult:
    name: str
    family: str
    passed: bool
    max_error: float
    tolerance: float
    detail: str = ""
    informational: bool = False

    def line(self) -> str:
        status = "PASS" if self.passed else ("WARN" if self.informational else "FAIL")
        return f"[{status}] {self.family}/{self.name}: max error {self.max_error:.3e} (tolerance {self.tolerance:.1e}) {self.detail}".rstrip()


def _result(name, family, error, tolerance, detail="", informational=False) -> CheckResult:
    error = float(error)
    return CheckResult(name, family, bool(error <= tolerance), error, tolerance, detail, informational)


def finite_difference(fn: Callable[[], float], array: np.ndarray, index, h: float = FD_STEP) -> float:
    """Central difference of fn() in array[index]; array is restored afterwards."""
    original = array[index]
    array[index] = original + h
    upper = fn()
    array[index] = original - h
    lower = fn()
    array[index] = original
    return (upper - lower) / (2.0 * h)


def _random_problem(rng: np.random.Generator, n: int = 4, size: int = 16):
    F = rng.uniform(0.05, 0.95, size=(n, size, size, 3))
    M = rng.uniform(0.05, 0.95, size=(n, size, size, 1))
    I = rng.uniform(0.0, 1.0, size=(size, size, 3))
    B = rng.uniform(0.0, 1.0, size=(size, size, 3))
    return F, M, I, B


def _kink_free(F, M, I, B) -> Tuple[np.ndarray, np.ndarray]:
    """Entries of F and M whose perturbation stays away from L1 kinks and the entropy clamp."""
    residual = energy.composite_array(F, M, B) - I
    smooth_pixel = np.all(np.abs(residual) > KINK_MARGIN, axis=-1)
    clamp = energy.ENTROPY_CLAMP
    smooth_mask = (np.abs(M - clamp) > KINK_MARGIN) & (np.abs(M - (1.0 - clamp)) > KINK_MARGIN)
    ok_F = np.broadcast_to(smooth_pixel[None, ..., None], F.shape)
    ok_M = smooth_mask & smooth_pixel[None, ..., None]
    return ok_F, ok_M


def check_gradients(seed: int = 0, stacks: int = 20, entries: int = 48) -> List[CheckResult]:
    """Analytic gradient against central differences on random 16x16, N=4 problems.

    The time term is differentiated at its best shifts, so the finite
    differences are taken with those shifts held fixed.
    """
    rng = np.random.default_rng(seed)
    weights = energy.EnergyWeights()
    worst = {"image": 0.0, "sharp": 0.0, "time": 0.0, "total": 0.0}
    term_weights = {
        "image": energy.EnergyWeights(1.0, 0.0, 0.0),
        "sharp": energy.EnergyWeights(0.0, 0.0, 1.0),
        "time": energy.EnergyWeights(0.0, 1.0, 0.0),
        "total": weights,
    }
    for _ in range(stacks):
        F, M, I, B = _random_problem(rng)
        shifts = energy.evaluate_arrays(F, M, I, B, weights).shifts
        ok_F, ok_M = _kink_free(F, M, I, B)
        picked_F = rng.permutation(np.argwhere(ok_F))[:entries]
        picked_M = rng.permutation(np.argwhere(ok_M))[:entries]
        for term, w in term_weights.items():
            analytic = energy.evaluate_arrays(F, M, I, B, w, shifts=shifts, with_grad=True).gradient

            def total() -> float:
                return energy.evaluate_arrays(F, M, I, B, w, shifts=shifts).breakdown.total

            for array, grad, picked in ((F, analytic.dF, picked_F), (M, analytic.dM, picked_M)):
                for index in map(tuple, picked):
                    numeric = finite_difference(total, array, index)
                    exact = grad[index]
                    scale = max(abs(numeric), abs(exact), 1e-7)
                    worst[term] = max(worst[term], abs(numeric - exact) / scale)
    return [
        _result(f"d{term}", "gradients", error, GRADIENT_TOLERANCE, f"{stacks} stacks")
        for term, error in worst.items()
    ]


def _translated_object(rng: np.random.Generator, size: int = 24, n: int = 6):
    obj_mask = np.zeros((size, size, 1))
    r = rng.uniform(2.0, 4.0)
    cy, cx = rng.uniform(8.0, size - 8.0, size=2)
    yy, xx = np.mgrid[0:size, 0:size]
    obj_mask[..., 0] = np.clip(r + 0.5 - np.hypot(yy - cy, xx - cx), 0.0, 1.0)
    appearance = np.broadcast_to(rng.uniform(size=3), (size, size, 3)) * (obj_mask > 0)
    velocity = rng.uniform(-1.0, 1.0, size=2)
    offsets = [(int(round(i * velocity[0])), int(round(i * velocity[1]))) for i in range(n)]
    F = np.stack([shift_array(appearance, dx, dy) for dx, dy in offsets])
    M = np.stack([shift_array(obj_mask, dx, dy) for dx, dy in offsets])
    B = Image(rng.uniform(size=(size, size, 3)))
    return RenderingStack(F, M), B, Image(appearance * obj_mask), Image(obj_mask), offsets


def check_blatting(seed: int = 0, objects: int = 50) -> List[CheckResult]:
    """Sub-frame composite vs blur-and-matte with the trajectory kernel, for translating objects."""
    rng = np.random.default_rng(seed + 1)
    worst_blatting = worst_piecewise = 0.0
    for _ in range(objects):
        stack, B, F0, M0, offsets = _translated_object(rng)
        subframes = compose_subframes(stack, B).data
        kernel = BlurKernel.from_offsets(offsets)
        worst_blatting = max(worst_blatting, np.abs(subframes - compose_blatting(F0, M0, kernel, B).data).max())
        half = len(offsets) // 2
        w = 1.0 / len(offsets)
        pieces = [
            (F0, M0, BlurKernel(tuple((dx, dy, w) for dx, dy in offsets[:half]))),
            (F0, M0, BlurKernel(tuple((dx, dy, w) for dx, dy in offsets[half:]))),
        ]
        worst_piecewise = max(worst_piecewise, np.abs(subframes - compose_piecewise(pieces, B).data).max())
    return [
        _result("subframes-vs-blatting", "blatting-equivalence", worst_blatting, EXACT_TOLERANCE, f"{objects} objects"),
        _result("subframes-vs-piecewise", "blatting-equivalence", worst_piecewise, EXACT_TOLERANCE, f"{objects} objects"),
    ]


def scanline_disc_iou(center_a, center_b, radius: float, samples: int = 20000) -> float:
    """IoU of two discs by integrating vertical chord overlaps along x."""
    lo = min(center_a[0], center_b[0]) - radius
    hi = max(center_a[0], center_b[0]) + radius
    width = (hi - lo) / samples
    xs = lo + (np.arange(samples) + 0.5) * width

    def chord(center):
        half = np.sqrt(np.clip(radius ** 2 - (xs - center[0]) ** 2, 0.0, None))
        return center[1] - half, center[1] + half

    a0, a1 = chord(center_a)
    b0, b1 = chord(center_b)
    inter = np.clip(np.minimum(a1, b1) - np.maximum(a0, b0), 0.0, None).sum() * width
    union = ((a1 - a0).sum() + (b1 - b0).sum()) * width - inter
    return float(inter / union)


def exhaustive_maxncc(a: np.ndarray, b: np.ndarray, pad_fraction: float) -> float:
    px, py = shift_bounds(a.shape[0], a.shape[1], pad_fraction)
    return max(
        ncc_at_shift(a, b, (dx, dy), with_grad=False)[0]
        for dy in range(-py, py + 1)
        for dx in range(-px, px + 1)
    )


def check_metric_oracles(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed + 2)
    results = []

    base = rng.uniform(0.2, 0.8, size=(16, 16, 3))
    results.append(_result("psnr-closed-form", "metric-oracles", abs(psnr(Image(base), Image(base + 0.1)) - 20.0), EXACT_TOLERANCE))

    zeros, ones = Image.full(16, 16, 3, 0.0), Image.full(16, 16, 3, 1.0)
    constant = abs(ssim(zeros, ones) - SSIM_C1 / (1.0 + SSIM_C1))
    results.append(_result("ssim-constant-images", "metric-oracles", constant, EXACT_TOLERANCE))

    symmetry = 0.0
    for _ in range(5):
        a, b = Image(rng.uniform(size=(16, 16, 3))), Image(rng.uniform(size=(16, 16, 3)))
        symmetry = max(symmetry, abs(ssim(a, b) - ssim(b, a)), abs(ssim(a, a) - 1.0))
    results.append(_result("ssim-symmetry-identity", "metric-oracles", symmetry, 1e-12))

    worst_tiou = 0.0
    for _ in range(10):
        radius = rng.uniform(3.0, 8.0)
        times = np.linspace(0.0, 1.0, 8)
        gt_centers = rng.uniform(10.0, 50.0, size=2) + np.outer(times, rng.uniform(-20.0, 20.0, size=2))
        est_centers = gt_centers + rng.uniform(-radius, radius, size=(8, 2))
        oracle = np.mean([scanline_disc_iou(e, g, radius) for e, g in zip(est_centers, gt_centers)])
        value = tiou(Trajectory(times, est_centers), Trajectory(times, gt_centers, radius=radius))
        worst_tiou = max(worst_tiou, abs(value - oracle))
    half_lens = abs(disc_iou(1.0, 1.0) - scanline_disc_iou((0.0, 0.0), (1.0, 0.0), 1.0))
    results.append(_result("tiou-vs-scanline", "metric-oracles", max(worst_tiou, half_lens), TIOU_TOLERANCE))

    worst_ncc = 0.0
    for _ in range(10):
        a = rng.uniform(size=(20, 20, 4))
        b = np.roll(a, tuple(rng.integers(-2, 3, size=2)), axis=(0, 1)) + rng.normal(0.0, 0.05, size=a.shape)
        worst_ncc = max(worst_ncc, abs(maxncc_arrays(a, b, 0.1).value - exhaustive_maxncc(a, b, 0.1)))
    results.append(_result("maxncc-vs-exhaustive", "metric-oracles", worst_ncc, EXACT_TOLERANCE))
    return results


def check_reversal(seed: int = 0, stacks: int = 20) -> List[CheckResult]:
    """Every loss term gives identical values on a stack and its reverse."""
    rng = np.random.default_rng(seed + 3)
    worst = {"image": 0.0, "time": 0.0, "sharp": 0.0, "appearance": 0.0}
    for _ in range(stacks):
        F, M, I, B = _random_problem(rng, n=int(rng.integers(2, 7)))
        stack = RenderingStack(F, M)
        gt = RenderingStack(*_random_problem(rng, n=stack.n)[:2])
        back = energy.reverse_stack(stack)
        I, B = Image(I), Image(B)
        worst["image"] = max(worst["image"], abs(energy.loss_image(stack, I, B) - energy.loss_image(back, I, B)))
        worst["time"] = max(worst["time"], abs(energy.loss_time(stack) - energy.loss_time(back)))
        worst["sharp"] = max(worst["sharp"], abs(energy.loss_sharp(stack) - energy.loss_sharp(back)))
        worst["appearance"] = max(
            worst["appearance"],
            abs(energy.loss_appearance(stack, gt).value - energy.loss_appearance(back, gt).value),
        )
    return [_result(f"loss-{name}", "reversal-invariance", error, 0.0, f"{stacks} stacks") for name, error in worst.items()]


def check_evaluate_reversal(seed: int = 0) -> List[CheckResult]:
    sample = sample_scene(seed, canvas=(32, 32), n_subframes=8)
    rng = np.random.default_rng(seed + 4)
    noisy = RenderingStack(
        np.clip(sample.gt_stack.F + rng.uniform(-0.05, 0.05, sample.gt_stack.F.shape), 0.0, 1.0),
        sample.gt_stack.M,
    )
    forward = evaluate(noisy, sample)
    backward = evaluate(noisy.reversed(), sample)
    error = max(abs(forward.psnr_db - backward.psnr_db), abs(forward.ssim - backward.ssim), abs(forward.tiou - backward.tiou))
    flipped = forward.direction != backward.direction
    return [
        CheckResult(
            "evaluate", "reversal-invariance", bool(error <= EXACT_TOLERANCE and flipped), float(error),
            EXACT_TOLERANCE, f"directions {forward.direction.value}/{backward.direction.value}",
        )
    ]


def check_background_invariance(seed: int = 0, solver_cfg: Optional[SolverConfig] = None) -> List[CheckResult]:
    """Solve one object over two backgrounds and compare F*M on the union of GT supports."""
    cfg = solver_cfg or SolverConfig(max_iters=150)
    first, second = sample_scene_pair(seed, canvas=(48, 48), n_subframes=cfg.n_subframes)
    a = solve(first.I, first.B, cfg).stack
    b = solve(second.I, second.B, cfg).stack
    support = (first.gt_stack.M[..., 0] > 0).any(axis=0)
    diff = np.abs(a.F * a.M - b.F * b.M).mean(axis=0).mean(axis=-1)
    error = float(diff[support].mean()) if support.any() else 0.0
    return [_result("solver-fm-product", "background-invariance", error, BACKGROUND_TOLERANCE, "empirical tolerance", informational=True)]


async def _run_families(families: Sequence[Callable[[], List[CheckResult]]], jobs: int) -> List[List[CheckResult]]:
    semaphore = asyncio.Semaphore(jobs)

    async def guarded(family):
        async with semaphore:
            return await asyncio.to_thread(family)

    return list(await asyncio.gather(*(guarded(family) for family in families)))


def run_checks(
    seed: int = 0,
    include_solver: bool = False,
    gradient_stacks: int = 20,
    solver_cfg: Optional[SolverConfig] = None,
    jobs: int = 1,
) -> List[CheckResult]:
    """Run the families up to `jobs` at a time; results keep the family order."""
    results: List[CheckResult] = []
    families = [
        lambda: check_gradients(seed, gradient_stacks),
        lambda: check_blatting(seed),
        lambda: check_metric_oracles(seed),
        lambda: check_reversal(seed),
        lambda: check_evaluate_reversal(seed),
    ]
    if include_solver:
        families.append(lambda: check_background_invariance(seed, solver_cfg))
    for batch in asyncio.run(_run_families(families, jobs)):
        for result in batch:
            log = logger.info if result.passed or result.informational else logger.error
            log("%s", result.line())
        results.extend(batch)
    return results


def suite_passed(results: List[CheckResult]) -> bool:
    return all(r.passed for r in results if not r.informational)


def failed_checks(results: List[CheckResult]) -> List[str]:
    return [f"{r.family}/{r.name}" for r in results if not r.passed and not r.informational]
