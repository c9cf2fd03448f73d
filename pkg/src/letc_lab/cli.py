"""Command-line interface for LetC Lab."""

import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import click
from pydantic import ValidationError

from . import __version__
from .calibrate import calibration_report, evaluate_product, generate_sales, load_sales, long_horizon_regret
from .errors import LetcLabError, ProductDiscarded
from .harness import aggregate, build_instance, doubling_grid, emit, instance_sigma_star, instance_spectrum, run_grid
from .policies import make_planner
from .schema import (
    DoublingSpec,
    EvaluationSettings,
    ExperimentConfig,
    PlanMode,
    PlannerSpec,
)
from .spectrum import default_eta_grid, solve_critical_eta, spectrum_table, summarize, verify_null_space

MODES: list[str] = ["simple", "general", "experiment", "timevarying"]
FORMATS: list[str] = ["csv", "json", "both"]


def _fail_validation(what: str, e: ValidationError) -> None:
    click.echo(f"Error: Invalid {what}:", err=True)
    for error in e.errors():
        loc = ".".join(str(x) for x in error["loc"])
        click.echo(f"  - {loc}: {error['msg']}", err=True)
    sys.exit(1)


def load_config(path: Path | None) -> ExperimentConfig:
    """Read an experiment config file, or return the defaults."""
    if path is None:
        return ExperimentConfig()
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise click.ClickException(f"Cannot read config {path}: {e.strerror or e}")
    try:
        return ExperimentConfig.model_validate_json(text)
    except ValidationError as e:
        _fail_validation(f"config {path}", e)


def apply_overrides(config: ExperimentConfig, **overrides: Any) -> ExperimentConfig:
    """Flags given on the command line win over the file."""
    update: dict[str, Any] = {}
    if overrides.get("seed") is not None:
        update["base_seed"] = overrides["seed"]
    if overrides.get("out") is not None:
        update["out_dir"] = str(overrides["out"])
    if overrides.get("workers") is not None:
        update["workers"] = overrides["workers"]
    if overrides.get("mode") is not None:
        update["planner"] = config.planner.model_copy(update={"mode": PlanMode(overrides["mode"])})
    if overrides.get("full_grid"):
        config = config.with_full_grid()
    merged = config.model_copy(update=update)
    try:
        return ExperimentConfig.model_validate(merged.model_dump())
    except ValidationError as e:
        _fail_validation("options", e)


def _echo_json(payload: Any) -> None:
    click.echo(json.dumps(payload, indent=2, default=str))


def _fmt(value: float) -> str:
    return "nan" if value is None or math.isnan(value) else f"{value:.4g}"


config_option = click.option(
    "--config", "-c", "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Experiment config (JSON).",
)
seed_option = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Base seed (u64).")
out_option = click.option("--out", "-o", type=click.Path(file_okay=False, path_type=Path), default=None, help="Output directory.")
workers_option = click.option("--workers", "-w", type=click.IntRange(1), default=None, help="Worker processes.")
format_option = click.option(
    "--format", "-f", "fmt",
    type=click.Choice(FORMATS, case_sensitive=False),
    default="both",
    help="Output files to write.",
)


@click.group()
@click.version_option(version=__version__, prog_name="letc-lab")
@click.option("--verbose", "-v", is_flag=True, help="Log at DEBUG level.")
def main(verbose: bool) -> None:
    """LetC Lab - simulation lab for contextual dynamic pricing.

    Runs localized explore-then-commit and its baselines on synthetic
    linear-demand instances, plans its stages, inspects instance spectra,
    and evaluates it on calibrated historical sales.
    """
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@config_option
@seed_option
@out_option
@workers_option
@click.option("--mode", "-m", type=click.Choice(MODES, case_sensitive=False), default=None, help="Planner mode.")
@click.option("--full-grid", is_flag=True, help="d up to 64, T up to 2^17, 100 trials.")
@format_option
def simulate(
    config_path: Path | None,
    seed: int | None,
    out: Path | None,
    workers: int | None,
    mode: str | None,
    full_grid: bool,
    fmt: str,
) -> None:
    """Run the replicated regret grid and write traces and aggregates.

    Examples:

        letc-lab simulate --seed 7 --out results

        letc-lab simulate -c desk.json --workers 8 --mode general
    """
    config = apply_overrides(
        load_config(config_path), seed=seed, out=out, workers=workers, mode=mode, full_grid=full_grid
    )
    try:
        results = run_grid(config)
        rows = aggregate(results, config.slope_window)
        paths = emit(results, rows, config, config.out_dir, fmt)
    except LetcLabError as e:
        raise click.ClickException(str(e))

    click.echo(f"{'policy':12} {'d':>4} {'T':>8} {'mean':>12} {'std':>12} {'slope':>8}")
    for row in rows:
        click.echo(
            f"{row.policy:12} {row.d:>4} {row.T:>8} {_fmt(row.mean):>12} {_fmt(row.std):>12} {_fmt(row.slope):>8}"
        )
    failed = sum(not r.ok for r in results)
    if failed:
        click.echo(f"{failed} trial(s) failed; see the JSON output for details.", err=True)
    for path in paths:
        click.echo(f"Wrote {path}")


@main.command()
@config_option
@seed_option
@out_option
@workers_option
@click.option("--mode", "-m", type=click.Choice(MODES, case_sensitive=False), default=None, help="Planner mode.")
@click.option("--T0", "t0", type=click.IntRange(4), default=None, help="First segment length.")
@click.option("--total-T", "total_t", type=click.IntRange(4), default=None, help="Total horizon.")
@format_option
def doubling(
    config_path: Path | None,
    seed: int | None,
    out: Path | None,
    workers: int | None,
    mode: str | None,
    t0: int | None,
    total_t: int | None,
    fmt: str,
) -> None:
    """Anytime regret curves from restarting LetC on doubling segments."""
    config = apply_overrides(load_config(config_path), seed=seed, out=out, workers=workers, mode=mode)
    spec = config.doubling.model_dump()
    if t0 is not None:
        spec["T0"] = t0
    if total_t is not None:
        spec["total_T"] = total_t
    config = config.model_copy(update={"doubling": DoublingSpec.model_validate(spec)})
    try:
        results, rows = doubling_grid(config)
        paths = emit(results, rows, config, config.out_dir, fmt, prefix="doubling_")
    except LetcLabError as e:
        raise click.ClickException(str(e))
    for row in rows:
        click.echo(f"d={row.d:<4} final mean {_fmt(row.mean)} (std {_fmt(row.std)}), late-segment slope {_fmt(row.slope)}")
    for path in paths:
        click.echo(f"Wrote {path}")


@main.command()
@click.option("--T", "horizon", type=click.IntRange(3), required=True, help="Horizon.")
@click.option("--d", "dim", type=click.IntRange(1), required=True, help="Context dimension.")
@click.option("--mode", "-m", type=click.Choice(MODES + ["etc"], case_sensitive=False), default="experiment")
@click.option("--C0", "c0", type=float, default=None)
@click.option("--C1", "c1", type=float, default=None)
@click.option("--C2", "c2", type=float, default=None)
@click.option("--C3", "c3", type=float, default=None)
@click.option("--kappa", type=float, default=None)
@click.option("--eta-max", type=float, default=None)
@config_option
def plan(
    horizon: int,
    dim: int,
    mode: str,
    c0: float | None,
    c1: float | None,
    c2: float | None,
    c3: float | None,
    kappa: float | None,
    eta_max: float | None,
    config_path: Path | None,
) -> None:
    """Print the stage plan for a horizon and dimension.

    The general mode estimates the instance spectrum from --config (or the
    default benchmark instance) first.
    """
    config = load_config(config_path)
    given = {"C0": c0, "C1": c1, "C2": c2, "C3": c3, "kappa": kappa, "eta_max": eta_max}
    try:
        spec = PlannerSpec.model_validate(
            {**config.planner.model_dump(), "mode": mode, **{k: v for k, v in given.items() if v is not None}}
        )
    except ValidationError as e:
        _fail_validation("planner options", e)
    bounds = build_instance(config.instance, dim).bounds
    try:
        summary = instance_spectrum(config, dim) if spec.mode is PlanMode.GENERAL else None
        result = make_planner(spec.mode, dim, spec, summary, bounds.default_eta_max)(horizon)
    except LetcLabError as e:
        raise click.ClickException(str(e))
    _echo_json(result.model_dump(mode="json"))
    if result.horizon_too_short:
        click.echo("Warning: the horizon is too short for this plan; later stages will be truncated.", err=True)


@main.command()
@config_option
@click.option("--d", "dim", type=click.IntRange(1), required=True, help="Context dimension.")
@click.option("--T", "horizon", type=click.IntRange(3), default=None, help="Solve the critical inequality for this horizon.")
@click.option("--samples", "-n", type=click.IntRange(1), default=None, help="Monte Carlo samples.")
@seed_option
@click.option(
    "--eta", "etas", type=float, multiple=True, help="Tabulate d_tilde, S and the gap at these radii (default: a geometric grid up to eta_max)."
)
def spectrum(
    config_path: Path | None,
    dim: int,
    horizon: int | None,
    samples: int | None,
    seed: int | None,
    etas: tuple[float, ...],
) -> None:
    """Estimate the optimal-price second-moment spectrum of an instance."""
    config = load_config(config_path)
    if seed is not None:
        config = config.model_copy(update={"base_seed": seed})
    if samples is not None:
        config = config.model_copy(update={"planner": config.planner.model_copy(update={"spectrum_samples": samples})})
    try:
        env = build_instance(config.instance, dim)
        n = config.planner.spectrum_samples
        sigma = instance_sigma_star(config, dim)
        summary = summarize(sigma, env.theta, n)
        null_check = verify_null_space(sigma, env.theta)
        payload: dict[str, Any] = {
            "summary": summary.as_dict(),
            "null_space": {"residual": null_check.residual, "second_smallest": null_check.second_smallest},
        }
        if horizon is not None:
            eta_max = config.planner.eta_max or env.bounds.default_eta_max
            solution = solve_critical_eta(summary, horizon, dim, config.planner.kappa, eta_max, zeta=config.planner.zeta)
            payload["critical"] = solution.as_dict()
            grid = list(etas) if etas else default_eta_grid(eta_max)
            payload["table"] = spectrum_table(summary, grid, horizon, config.planner.kappa)
    except LetcLabError as e:
        raise click.ClickException(str(e))
    _echo_json(payload)


def _sales(path: Path, products: tuple[str, ...]) -> dict:
    try:
        grouped = load_sales(path)
    except OSError as e:
        raise click.ClickException(f"Cannot read sales file {path}: {e.strerror or e}")
    except ValidationError as e:
        _fail_validation(f"sales file {path}", e)
    except ValueError as e:
        raise click.ClickException(str(e))
    if products:
        unknown = [p for p in products if p not in grouped]
        if unknown:
            raise click.ClickException(f"Unknown product(s): {', '.join(unknown)}")
        grouped = {p: grouped[p] for p in products}
    return grouped


def _write_json(path: Path, payload: Any) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    except OSError as e:
        raise click.ClickException(f"Cannot write {path}: {e.strerror or e}")
    click.echo(f"Wrote {path}")


@main.command()
@click.argument("sales_csv", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", "-o", type=click.Path(file_okay=False, path_type=Path), default=Path("calibration"))
@click.option("--product", "-p", "products", multiple=True, help="Only these product ids.")
@click.option("--components", type=click.IntRange(1), default=1, help="Gaussian components per weekday.")
@seed_option
def calibrate(sales_csv: Path, out: Path, products: tuple[str, ...], components: int, seed: int | None) -> None:
    """Fit demand truth and competitor-price models per product.

    SALES_CSV: product_id,date,price,units_sold,comp_min,comp_max,min_allowed,max_allowed
    """
    settings = EvaluationSettings(n_components=components, base_seed=seed or 0)
    reports = []
    for product_id, records in _sales(sales_csv, products).items():
        try:
            report = calibration_report(records, settings, product_id)
        except LetcLabError as e:
            raise click.ClickException(f"{product_id}: {e}")
        status = "ok" if report.status == "ok" else f"discarded ({report.discard_reason})"
        click.echo(f"{product_id}: {len(records)} records, {status}")
        reports.append(report.model_dump(mode="json"))
    _write_json(out / "calibration.json", reports)


@main.command()
@click.argument("sales_csv", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out", "-o", type=click.Path(file_okay=False, path_type=Path), default=Path("evaluation"))
@click.option("--product", "-p", "products", multiple=True, help="Only these product ids.")
@click.option("--trials", "-m", type=click.IntRange(1), default=20)
@click.option("--horizon", type=click.IntRange(1), default=365, help="Days per evaluation run.")
@click.option("--components", type=click.IntRange(1), default=1, help="Gaussian components per weekday.")
@click.option("--no-pool", is_flag=True, help="Refit stage 2 on stage-2 data only.")
@click.option("--doubling", is_flag=True, help="Also compare doubling LetC with the offline policy over --years.")
@click.option("--years", type=click.IntRange(1), default=5)
@seed_option
@workers_option
def evaluate(
    sales_csv: Path,
    out: Path,
    products: tuple[str, ...],
    trials: int,
    horizon: int,
    components: int,
    no_pool: bool,
    doubling: bool,
    years: int,
    seed: int | None,
    workers: int | None,
) -> None:
    """Compare LetC with the offline kernel-ridge policy on calibrated products."""
    settings = EvaluationSettings(
        trials=trials,
        horizon=horizon,
        n_components=components,
        pool_stages=not no_pool,
        doubling=doubling,
        base_seed=seed or 0,
    )
    grouped = _sales(sales_csv, products)
    ids = list(grouped)
    try:
        if (workers or 1) > 1 and len(ids) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                reports = list(pool.map(evaluate_product, [grouped[p] for p in ids], [settings] * len(ids), ids))
        else:
            reports = [evaluate_product(grouped[p], settings, p) for p in ids]
    except LetcLabError as e:
        raise click.ClickException(str(e))

    click.echo(f"{'product':12} {'letc':>14} {'offline':>14} {'improvement %':>14}")
    for report in reports:
        if report.status != "ok":
            click.echo(f"{report.product_id:12} discarded: {report.discard_reason}")
            continue
        by_policy = {row.policy: row for row in report.revenue}
        letc, offline = by_policy["letc"], by_policy["offline"]
        click.echo(
            f"{report.product_id:12} {letc.mean_revenue:>14.2f} {offline.mean_revenue:>14.2f} "
            f"{_fmt(letc.improvement_pct):>14}"
        )
    _write_json(out / "evaluation.json", [r.model_dump(mode="json") for r in reports])

    if doubling:
        for report in reports:
            if report.status != "ok":
                continue
            try:
                frame = long_horizon_regret(grouped[report.product_id], settings, report.product_id, years)
            except ProductDiscarded as e:
                click.echo(f"{report.product_id}: discarded during the long-horizon run ({e})", err=True)
                continue
            except LetcLabError as e:
                raise click.ClickException(f"{report.product_id}: {e}")
            path = out / f"regret_{report.product_id}.csv"
            try:
                frame.to_csv(path, index=False)
            except OSError as e:
                raise click.ClickException(f"Cannot write {path}: {e.strerror or e}")
            click.echo(f"Wrote {path}")


@main.command("generate-sales")
@click.argument("output_csv", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--products", "-n", type=click.IntRange(1), default=10)
@click.option("--days", type=click.IntRange(1), default=1000)
@click.option("--seed", type=click.IntRange(0), default=0)
@click.option("--truth", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Also write true parameters here.")
def generate_sales_command(output_csv: Path, products: int, days: int, seed: int, truth: Path | None) -> None:
    """Write synthetic historical sales in the calibration input format."""
    frame, truths = generate_sales(products, days, seed)
    try:
        output_csv.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(output_csv, index=False)
    except OSError as e:
        raise click.ClickException(f"Cannot write {output_csv}: {e.strerror or e}")
    click.echo(f"Wrote {len(frame)} records for {products} product(s) to {output_csv}")
    if truth is not None:
        _write_json(
            truth,
            {pid: {"alpha": t.alpha.tolist(), "beta": t.beta.tolist()} for pid, t in truths.items()},
        )


if __name__ == "__main__":
    main()
