import sys

import click

from agents.gradient_checker import failed_checks, run_checks, suite_passed
from agents.logging_config import configure_logging, logger
from agents.orchestrator import BenchOrchestrator, Method
from config.settings import load_config, with_overrides
from services.errors import FmoError


def _config(config_path, seed=None, jobs=None):
    return with_overrides(load_config(config_path), seed=seed, jobs=jobs)


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def common_options(func):
    func = click.option("--jobs", type=click.IntRange(min=1), default=None, help="Worker pool width.")(func)
    func = click.option("--seed", type=click.IntRange(min=0, max=2 ** 64 - 1), default=None, help="Run seed (u64).")(func)
    func = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="JSON config file.")(func)
    return func


@click.group()
@click.option("--log-level", default=None, help="error|warn|info|debug (overrides FMO_LOG).")
def cli(log_level):
    """Fast-moving-object deblurring bench."""
    configure_logging(log_level)


@cli.command()
@common_options
@click.option("--out", "out_dir", default=None, help="Dataset directory (defaults to the config's dataset_dir).")
@click.option("--count", type=click.IntRange(min=1), default=None, help="Number of samples.")
def synth(config_path, seed, jobs, out_dir, count):
    """Generate a synthetic dataset."""
    try:
        cfg = _config(config_path, seed, jobs)
        if count is not None:
            cfg = with_overrides(cfg, sample_count=count)
        samples = BenchOrchestrator(cfg).run_synth(out_dir)
    except (FmoError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"wrote {len(samples)} samples to {out_dir or cfg.dataset_dir}")


@cli.command()
@common_options
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(file_okay=False))
@click.option("--out", "out_dir", required=True, help="Directory for estimated stacks.")
@click.option("--epsilon", type=click.FloatRange(min=0.0, max=1.0, min_open=True), default=None,
              help="Exposure fraction of the super-resolved frames.")
def solve(config_path, seed, jobs, dataset_dir, out_dir, epsilon):
    """Recover a rendering stack for every sample."""
    try:
        orchestrator = BenchOrchestrator(_config(config_path, seed, jobs))
        outcomes = orchestrator.run_solve(dataset_dir, out_dir, epsilon)
    except (FmoError, OSError) as exc:
        _fail(str(exc))
    failed = [o for o in outcomes if not o.ok]
    click.echo(f"solved {len(outcomes) - len(failed)}/{len(outcomes)} samples into {out_dir}")
    if failed:
        _fail("failed samples: " + ", ".join(o.sample_id for o in failed))


@cli.command(name="eval")
@common_options
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(file_okay=False))
@click.option("--est", "est_dir", default=None, help="Directory written by `solve`.")
@click.option("--baseline", "baselines", multiple=True,
              type=click.Choice([Method.BASELINE_I.value, Method.BASELINE_B.value]))
@click.option("--out", "out_csv", required=True, help="Result CSV path.")
def evaluate(config_path, seed, jobs, dataset_dir, est_dir, baselines, out_csv):
    """Score estimates and/or baselines; writes CSV, Markdown and HTML summaries."""
    methods = ([Method.SOLVER.value] if est_dir else []) + list(baselines)
    if not methods:
        _fail("nothing to evaluate: pass --est and/or --baseline")
    try:
        orchestrator = BenchOrchestrator(_config(config_path, seed, jobs))
        rows = orchestrator.run_eval(dataset_dir, out_csv, est_dir, methods)
    except (FmoError, OSError) as exc:
        _fail(str(exc))
    for row in rows:
        if row["id"] == "MEAN":
            psnr = "" if row["psnr_db"] is None else f"{row['psnr_db']:.2f} dB"
            click.echo(f"{row['method']}: {psnr}")
    if orchestrator.failures:
        logger.warning("%d samples could not be evaluated", len(orchestrator.failures))


@cli.command()
@common_options
@click.option("--with-solver", is_flag=True,
              help="Also report the background-invariance check (solver settings from --config if given).")
def check(config_path, seed, jobs, with_solver):
    """Run the gradient, formation, metric and reversal self-checks."""
    try:
        cfg = _config(config_path, seed, jobs)
    except (FmoError, OSError) as exc:
        _fail(str(exc))
    solver_cfg = cfg.solver if config_path else None
    results = run_checks(seed=cfg.seed, include_solver=with_solver, solver_cfg=solver_cfg, jobs=cfg.jobs)
    for result in results:
        click.echo(result.line())
    if not suite_passed(results):
        _fail("failed checks: " + ", ".join(failed_checks(results)))
    click.echo(f"all {len(results)} checks passed")


@cli.command()
@common_options
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(file_okay=False))
@click.option("--out", "out_csv", required=True, help="Ablation CSV path.")
def ablate(config_path, seed, jobs, dataset_dir, out_csv):
    """Solve the dataset with loss terms switched off one at a time."""
    try:
        rows = BenchOrchestrator(_config(config_path, seed, jobs)).run_ablate(dataset_dir, out_csv)
    except (FmoError, OSError) as exc:
        _fail(str(exc))
    for row in rows:
        psnr = "n/a" if row["psnr_db"] is None else f"{row['psnr_db']:.2f} dB"
        click.echo(f"{row['variant']}: {psnr}")


if __name__ == "__main__":
    cli()
