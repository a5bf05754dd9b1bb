import asyncio
import csv
import io
import json
import os
import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from agents.evaluator import BaselineKind, EvalReport, baseline_report, evaluate
from agents.logging_config import logger
from agents.scene_generator import sample_scene
from agents.solver import SolveResult, solve, solve_superres
from config.settings import BenchConfig, SolverConfig, config_to_dict, dump_config
from services.dataset_service import load_stack, read_manifest, read_sample, save_stack, write_dataset
from services.energy import EnergyWeights
from services.errors import DatasetError
from services.image_service import save_png
from services.report_formatter import format_html, format_markdown
from services.scene_model import SynthSample

RESULT_HEADER = ["id", "method", "psnr_db", "ssim", "tiou", "direction", "wall_time_s"]
HISTORY_HEADER = ["iteration", "total", "image", "time", "sharp"]
ABLATION_HEADER = ["variant", "psnr_db", "ssim", "tiou"]


class Method(str, Enum):
    SOLVER = "solver"
    BASELINE_I = "baseline-I"
    BASELINE_B = "baseline-B"


BASELINE_KINDS = {Method.BASELINE_I: BaselineKind.INPUT, Method.BASELINE_B: BaselineKind.BACKGROUND}


def ablation_variants(weights: EnergyWeights) -> Dict[str, EnergyWeights]:
    """Loss terms switched off one at a time."""
    return {
        "full": weights,
        "no-time": replace(weights, alpha_T=0.0),
        "no-sharp": replace(weights, alpha_S=0.0),
        "image-only": replace(weights, alpha_T=0.0, alpha_S=0.0),
    }


def sample_seeds(seed: int, count: int) -> List[int]:
    """Independent per-sample seeds derived from the run seed."""
    state = np.random.SeedSequence(seed).generate_state(count, dtype=np.uint64)
    return [int(s) for s in state]


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


@dataclass
class SampleOutcome:
    sample_id: str
    ok: bool
    error: Optional[str] = None
    result: Any = None


class BenchOrchestrator:
    """Runs the bench stages over a dataset with a bounded worker pool.

    Work items run in threads; results are gathered back in manifest order so
    every file written is independent of scheduling.
    """

    def __init__(self, config: Optional[BenchConfig] = None):
        self.config = config or BenchConfig()
        self.failures: List[SampleOutcome] = []

    async def _run_pool(self, items: Sequence[Any], work: Callable[[Any], Any], label: Callable[[Any], str]) -> List[SampleOutcome]:
        semaphore = asyncio.Semaphore(self.config.jobs)

        async def guarded(item) -> SampleOutcome:
            async with semaphore:
                return await self._safe_run(label(item), work, item)

        outcomes = await asyncio.gather(*(guarded(item) for item in items))
        self.failures.extend(o for o in outcomes if not o.ok)
        return list(outcomes)

    async def _safe_run(self, sample_id: str, work: Callable[[Any], Any], item: Any) -> SampleOutcome:
        try:
            result = await asyncio.to_thread(work, item)
            return SampleOutcome(sample_id, True, result=result)
        except Exception as exc:
            logger.error("sample %s failed: %s", sample_id, exc)
            logger.debug("==== failure detail for %s ====\n%r", sample_id, exc)
            return SampleOutcome(sample_id, False, error=str(exc))

    # ---- synth -------------------------------------------------------

    def _generate(self, seed: int) -> SynthSample:
        cfg = self.config
        return sample_scene(
            seed,
            canvas=cfg.canvas,
            n_subframes=cfg.n_gt,
            background_kind=cfg.background_kind,
            dynamic_background=cfg.dynamic_background,
        )

    async def synthesize(self, out_dir: Optional[str] = None) -> List[SynthSample]:
        cfg = self.config
        seeds = sample_seeds(cfg.seed, cfg.sample_count)
        outcomes = await self._run_pool(seeds, self._generate, str)
        failed = [o for o in outcomes if not o.ok]
        if failed:
            raise DatasetError(f"{len(failed)} of {len(seeds)} samples could not be generated", out_dir)
        samples = [o.result for o in outcomes]
        target = out_dir or cfg.dataset_dir
        await asyncio.to_thread(write_dataset, samples, target, config_to_dict(cfg))
        logger.info("synthesized %d samples into %s", len(samples), target)
        return samples

    # ---- solve -------------------------------------------------------

    def _load(self, dataset_dir: str):
        manifest = read_manifest(dataset_dir)
        return manifest, manifest["samples"]

    def _solve_one(self, dataset_dir: str, out_dir: str, entry: Dict[str, Any], n_gt: int, epsilon: float, solver_cfg: SolverConfig) -> SolveResult:
        sample = read_sample(dataset_dir, entry, n_gt)
        started = time.perf_counter()
        result = solve(sample.I, sample.B, solver_cfg)
        elapsed = time.perf_counter() - started

        sample_dir = os.path.join(out_dir, entry["id"])
        save_stack(result.stack, os.path.join(sample_dir, "est"))
        write_history(result, os.path.join(sample_dir, "history.csv"))
        frames = solve_superres(sample.I, sample.B, solver_cfg, self.config.eval_l, epsilon, result=result)
        for k, frame in enumerate(frames):
            save_png(frame, os.path.join(sample_dir, "sr", f"{k:02d}.png"))
        meta = {
            "id": entry["id"],
            "seed": entry["seed"],
            "n_subframes": result.stack.n,
            "iterations_run": result.iterations_run,
            "converged": result.converged,
            "initial_energy": result.history[0].total,
            "final_energy": result.final_energy,
            "superres": {"l": self.config.eval_l, "epsilon": epsilon},
        }
        if self.config.record_timing:
            meta["wall_time_s"] = elapsed
        with open(os.path.join(sample_dir, "solve.json"), "w") as handle:
            json.dump(meta, handle, indent=2, sort_keys=True)
            handle.write("\n")
        return result

    async def solve_dataset(self, dataset_dir: str, out_dir: str, epsilon: Optional[float] = None) -> List[SampleOutcome]:
        manifest, entries = self._load(dataset_dir)
        os.makedirs(out_dir, exist_ok=True)
        epsilon = self.config.eval_epsilon if epsilon is None else epsilon
        solver_cfg = self.config.solver
        dump_config(self.config, os.path.join(out_dir, "config.json"))

        def work(entry):
            return self._solve_one(dataset_dir, out_dir, entry, manifest["N"], epsilon, solver_cfg)

        outcomes = await self._run_pool(entries, work, lambda e: e["id"])
        logger.info("solved %d/%d samples", sum(o.ok for o in outcomes), len(outcomes))
        return outcomes

    # ---- eval --------------------------------------------------------

    def _evaluate_one(self, dataset_dir: str, entry: Dict[str, Any], n_gt: int, est_dir: Optional[str], methods: Sequence[Method]) -> List[Dict[str, Any]]:
        cfg = self.config
        sample = read_sample(dataset_dir, entry, n_gt)
        rows = []
        for method in methods:
            if method is Method.SOLVER:
                stack_dir = os.path.join(est_dir, entry["id"], "est")
                if not os.path.isdir(stack_dir):
                    logger.warning("no estimated stack for sample %s in %s", entry["id"], est_dir)
                    rows.append(result_row(entry["id"], method.value, None))
                    continue
                report = evaluate(load_stack(stack_dir), sample, cfg.eval_l, cfg.eval_epsilon)
                timing = _solve_time(os.path.join(est_dir, entry["id"])) if cfg.record_timing else None
                rows.append(result_row(entry["id"], method.value, report, timing))
            else:
                report = baseline_report(sample, BASELINE_KINDS[method].value, cfg.eval_l, cfg.eval_epsilon)
                rows.append(result_row(entry["id"], method.value, report))
        return rows

    async def evaluate_dataset(
        self,
        dataset_dir: str,
        out_csv: str,
        est_dir: Optional[str] = None,
        methods: Optional[Sequence[str]] = None,
    ) -> List[Dict[str, Any]]:
        """Result rows per (sample, method) plus one MEAN row per method, written as CSV, Markdown and HTML."""
        manifest, entries = self._load(dataset_dir)
        chosen = [Method(m) for m in (methods or ([Method.SOLVER.value] if est_dir else []))]
        if Method.SOLVER in chosen and not est_dir:
            raise DatasetError("solver rows need an estimate directory", dataset_dir)

        def work(entry):
            return self._evaluate_one(dataset_dir, entry, manifest["N"], est_dir, chosen)

        outcomes = await self._run_pool(entries, work, lambda e: e["id"])
        rows: List[Dict[str, Any]] = []
        for entry, outcome in zip(entries, outcomes):
            if outcome.ok:
                rows.extend(outcome.result)
            else:
                rows.extend(result_row(entry["id"], m.value, None) for m in chosen)
        rows.extend(mean_rows(rows, chosen))

        write_results(rows, out_csv)
        markdown_text = format_markdown([r for r in rows if r["id"] != "MEAN"])
        stem = os.path.splitext(out_csv)[0]
        with open(stem + ".md", "w") as handle:
            handle.write(markdown_text)
        with open(stem + ".html", "w") as handle:
            handle.write(format_html(markdown_text) + "\n")
        return rows

    # ---- ablate ------------------------------------------------------

    def _ablate_one(self, dataset_dir: str, entry: Dict[str, Any], n_gt: int, solver_cfg: SolverConfig) -> EvalReport:
        sample = read_sample(dataset_dir, entry, n_gt)
        result = solve(sample.I, sample.B, solver_cfg)
        return evaluate(result.stack, sample, self.config.eval_l, self.config.eval_epsilon)

    async def ablate(self, dataset_dir: str, out_csv: str) -> List[Dict[str, Any]]:
        manifest, entries = self._load(dataset_dir)
        rows = []
        for variant, weights in ablation_variants(self.config.solver.weights).items():
            solver_cfg = replace(self.config.solver, weights=weights)

            def work(entry, solver_cfg=solver_cfg):
                return self._ablate_one(dataset_dir, entry, manifest["N"], solver_cfg)

            outcomes = await self._run_pool(entries, work, lambda e: e["id"])
            reports = [o.result for o in outcomes if o.ok]
            rows.append(
                {
                    "variant": variant,
                    "psnr_db": _mean([r.psnr_db for r in reports]),
                    "ssim": _mean([r.ssim for r in reports]),
                    "tiou": _mean([r.tiou for r in reports]),
                }
            )
            logger.info("ablation %s: %d/%d samples scored", variant, len(reports), len(entries))
        _write_csv(out_csv, ABLATION_HEADER, [[r["variant"]] + [_fmt(r[k]) for k in ABLATION_HEADER[1:]] for r in rows])
        return rows

    # ---- sync entry points -------------------------------------------

    def run_synth(self, out_dir: Optional[str] = None) -> List[SynthSample]:
        return asyncio.run(self.synthesize(out_dir))

    def run_solve(self, dataset_dir: str, out_dir: str, epsilon: Optional[float] = None) -> List[SampleOutcome]:
        return asyncio.run(self.solve_dataset(dataset_dir, out_dir, epsilon))

    def run_eval(self, dataset_dir: str, out_csv: str, est_dir: Optional[str] = None, methods: Optional[Sequence[str]] = None):
        return asyncio.run(self.evaluate_dataset(dataset_dir, out_csv, est_dir, methods))

    def run_ablate(self, dataset_dir: str, out_csv: str):
        return asyncio.run(self.ablate(dataset_dir, out_csv))


def result_row(sample_id: str, method: str, report: Optional[EvalReport], wall_time: Optional[float] = None) -> Dict[str, Any]:
    if report is None:
        return {"id": sample_id, "method": method, "psnr_db": None, "ssim": None, "tiou": None, "direction": "", "wall_time_s": None}
    return {
        "id": sample_id,
        "method": method,
        "psnr_db": report.psnr_db,
        "ssim": report.ssim,
        "tiou": report.tiou,
        "direction": report.direction.value,
        "wall_time_s": wall_time,
    }


def mean_rows(rows: Sequence[Dict[str, Any]], methods: Sequence[Method]) -> List[Dict[str, Any]]:
    summary = []
    for method in methods:
        chosen = [r for r in rows if r["method"] == method.value]
        summary.append(
            {
                "id": "MEAN",
                "method": method.value,
                "psnr_db": _mean([r["psnr_db"] for r in chosen]),
                "ssim": _mean([r["ssim"] for r in chosen]),
                "tiou": _mean([r["tiou"] for r in chosen]),
                "direction": "",
                "wall_time_s": _mean([r["wall_time_s"] for r in chosen]),
            }
        )
    return summary


def _solve_time(sample_dir: str) -> Optional[float]:
    try:
        with open(os.path.join(sample_dir, "solve.json")) as handle:
            return json.load(handle).get("wall_time_s")
    except (OSError, ValueError):
        return None


def _write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    with open(path, "w", newline="") as handle:
        handle.write(buffer.getvalue())


def write_results(rows: Sequence[Dict[str, Any]], path: str) -> None:
    body = [
        [r["id"], r["method"], _fmt(r["psnr_db"]), _fmt(r["ssim"]), _fmt(r["tiou"]), r["direction"], _fmt(r["wall_time_s"])]
        for r in rows
    ]
    _write_csv(path, RESULT_HEADER, body)


def write_history(result: SolveResult, path: str) -> None:
    rows = [
        [str(i)] + [f"{getattr(b, name):.17g}" for name in HISTORY_HEADER[1:]]
        for i, b in enumerate(result.history)
    ]
    _write_csv(path, HISTORY_HEADER, rows)
