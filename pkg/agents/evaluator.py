"""Scores a recovered stack against a synthetic sample.

Both stacks are rendered into l full- (or partial-) exposure frames; frame k
of the estimate is paired with frame k (forward) or l-1-k (backward) of the
ground truth and the direction with the higher mean PSNR is reported.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

from agents.logging_config import logger
from services.energy import Direction
from services.errors import MetricError
from services.formation import compose_superres
from services.image_service import Image, RenderingStack
from services.metrics import extract_trajectory, psnr, ssim, tiou
from services.scene_model import SynthSample


class BaselineKind(str, Enum):
    INPUT = "input-I"
    BACKGROUND = "background-B"


@dataclass(frozen=True)
class EvalReport:
    psnr_db: float
    ssim: float
    tiou: Optional[float]
    direction: Direction
    per_subframe: Tuple[Tuple[float, float], ...] = field(default=())


def _frame_scores(estimates: List[Image], truth: List[Image]) -> List[Tuple[float, float]]:
    return [(psnr(e, g), ssim(e, g)) for e, g in zip(estimates, truth)]


def _report(scores, tiou_value, direction) -> EvalReport:
    n = len(scores)
    return EvalReport(
        psnr_db=sum(p for p, _ in scores) / n,
        ssim=sum(s for _, s in scores) / n,
        tiou=tiou_value,
        direction=direction,
        per_subframe=tuple(scores),
    )


def _trajectory_score(est_stack: RenderingStack, sample: SynthSample, backward: bool) -> float:
    try:
        est = extract_trajectory(est_stack)
    except MetricError:
        return 0.0
    if backward:
        est = est.reversed()
    return tiou(est, sample.gt_traj)


def evaluate(est_stack: RenderingStack, sample: SynthSample, l: int = 8, epsilon: float = 1.0) -> EvalReport:
    if (est_stack.height, est_stack.width) != (sample.gt_stack.height, sample.gt_stack.width):
        raise MetricError("estimated stack dimensions differ from the sample")
    estimates = compose_superres(est_stack, sample.B, l, epsilon)
    truth = compose_superres(sample.gt_stack, sample.B, l, epsilon)

    forward = _frame_scores(estimates, truth)
    backward = _frame_scores(estimates[::-1], truth)
    forward_psnr = sum(p for p, _ in forward) / l
    backward_psnr = sum(p for p, _ in backward) / l

    if backward_psnr > forward_psnr:
        return _report(backward, _trajectory_score(est_stack, sample, True), Direction.BACKWARD)
    return _report(forward, _trajectory_score(est_stack, sample, False), Direction.FORWARD)


def baseline_report(sample: SynthSample, kind: str, l: int = 8, epsilon: float = 1.0) -> EvalReport:
    """I (or B) used as every super-resolved frame; TIoU is undefined for these."""
    kind = BaselineKind(kind)
    prediction = sample.I if kind is BaselineKind.INPUT else sample.B
    truth = compose_superres(sample.gt_stack, sample.B, l, epsilon)
    scores = [(psnr(prediction, g), ssim(prediction, g)) for g in truth]
    logger.debug("baseline %s: %d frames scored", kind.value, len(scores))
    return _report(scores, None, Direction.FORWARD)
