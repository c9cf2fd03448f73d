"""Replicated regret experiments over (d, T) grids.

Every trial is seeded from the configuration alone through
:func:`trial_seed`, so a grid's output is a pure function of its config no
matter how many worker processes run it.
"""

import json
import logging
import math
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .demand import (
    ConstantPlusUniform,
    DemandEnvironment,
    DiscreteExample,
    FeatureSampler,
    FiniteSupport,
    GaussianShock,
    ModelParams,
    PoissonDemand,
    PriceBounds,
    benchmark_theta,
    constant_price_theta,
    discrete_example_theta,
)
from .errors import DimensionMismatch, EmitError, LetcLabError
from .linalg import Matrix
from .policies import ExploreThenCommit, Greedy, LetC, Oracle, TimeVaryingEta, doubling_run, make_planner, run
from .policies.base import BasePolicy, RegretTrace
from .policies.letc import doubling_schedule
from .schema import POLICY_NAMES, ExperimentConfig, InstanceSpec, PlanMode
from .spectrum import SpectrumSummary, estimate_sigma_star, summarize

logger = logging.getLogger(__name__)

MASK64: int = (1 << 64) - 1
TRACE_HEADER: list[str] = ["policy", "d", "T", "trial", "t", "cum_regret"]
AGGREGATE_HEADER: list[str] = ["policy", "d", "T", "mean", "std", "slope"]
DOUBLING_POLICY_INDEX: int = len(POLICY_NAMES)
SPECTRUM_SEED_INDEX: int = DOUBLING_POLICY_INDEX + 1


def splitmix64(x: int) -> int:
    """One step of the splitmix64 output function."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trial_seed(base: int, d: int, T: int, policy_index: int, trial_index: int) -> int:
    """64-bit seed of one trial: splitmix64 folded over the fields in order."""
    state = base & MASK64
    for value in (d, T, policy_index, trial_index):
        state = splitmix64(state ^ (value & MASK64))
    return state


# Instances


def build_sampler(spec: InstanceSpec, d: int) -> FeatureSampler:
    if spec.sampler == "uniform":
        return ConstantPlusUniform(d)
    if spec.sampler == "discrete":
        return DiscreteExample(d)
    sampler = FiniteSupport(spec.points, spec.probabilities)
    if sampler.dim != d:
        raise DimensionMismatch(f"finite support has dimension {sampler.dim}, grid asks for {d}")
    return sampler


def build_theta(spec: InstanceSpec, d: int) -> ModelParams:
    if spec.theta == "benchmark":
        return benchmark_theta(d)
    if spec.theta == "discrete_example":
        return discrete_example_theta(d)
    if spec.theta == "constant_price":
        return constant_price_theta(d, spec.constant_price)
    if len(spec.alpha) != d or len(spec.beta) != d:
        raise DimensionMismatch(f"custom theta has dimension {len(spec.alpha)}, grid asks for {d}")
    return ModelParams(alpha=np.array(spec.alpha), beta=np.array(spec.beta))


def build_instance(spec: InstanceSpec, d: int) -> DemandEnvironment:
    noise = PoissonDemand() if spec.noise == "poisson" else GaussianShock(spec.sigma)
    return DemandEnvironment(
        theta=build_theta(spec, d),
        sampler=build_sampler(spec, d),
        noise=noise,
        bounds=PriceBounds(spec.lower, spec.upper, spec.margin),
    )


def instance_sigma_star(config: ExperimentConfig, d: int) -> Matrix:
    """Monte Carlo optimal-price second moment of the instance at dimension ``d``, seeded from the config."""
    env = build_instance(config.instance, d)
    rng = np.random.default_rng(trial_seed(config.base_seed, d, 0, SPECTRUM_SEED_INDEX, 0))
    return estimate_sigma_star(env.theta, env.sampler, env.bounds, config.planner.spectrum_samples, rng)


def instance_spectrum(config: ExperimentConfig, d: int) -> SpectrumSummary:
    theta = build_theta(config.instance, d)
    return summarize(instance_sigma_star(config, d), theta, config.planner.spectrum_samples)


def build_policy(
    name: str,
    d: int,
    config: ExperimentConfig,
    bounds: PriceBounds,
    summary: SpectrumSummary | None = None,
) -> BasePolicy:
    planner_spec = config.planner
    eta_max = planner_spec.eta_max if planner_spec.eta_max is not None else bounds.default_eta_max
    if name == "oracle":
        return Oracle()
    if name == "greedy":
        return Greedy()
    if name == "timevarying" or (name == "letc" and planner_spec.mode is PlanMode.TIME_VARYING):
        return TimeVaryingEta(eta_max, alternate=planner_spec.alternate_burn_in)
    mode = planner_spec.mode if planner_spec.mode is not PlanMode.TIME_VARYING else PlanMode.EXPERIMENT
    planner = make_planner(mode, d, planner_spec, summary, eta_max)
    if name == "etc":
        return ExploreThenCommit(planner=planner, alternate=planner_spec.alternate_burn_in)
    if name == "letc":
        return LetC(planner=planner, alternate=planner_spec.alternate_burn_in, pool=planner_spec.pool_stages)
    raise ValueError(f"unknown policy: {name}")


# Grid execution


@dataclass(frozen=True)
class TrialTask:
    config: ExperimentConfig
    policy: str
    policy_index: int
    d: int
    T: int
    trial: int
    summary: SpectrumSummary | None = None
    doubling: bool = False

    @property
    def seed(self) -> int:
        return trial_seed(self.config.base_seed, self.d, self.T, self.policy_index, self.trial)


@dataclass
class TrialResult:
    policy: str
    d: int
    T: int
    trial: int
    seed: int
    cumulative: np.ndarray | None = None
    segments: list[int] = field(default_factory=list)
    diagnostics: dict[str, float] = field(default_factory=dict)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def final_regret(self) -> float:
        if self.cumulative is None or self.cumulative.shape[0] == 0:
            return math.nan
        return float(self.cumulative[-1])


def _execute(task: TrialTask) -> RegretTrace:
    env = build_instance(task.config.instance, task.d)
    rng = np.random.default_rng(task.seed)
    if task.doubling:
        spec = task.config.planner
        eta_max = spec.eta_max if spec.eta_max is not None else env.bounds.default_eta_max
        mode = spec.mode if spec.mode not in (PlanMode.TIME_VARYING, PlanMode.ETC) else PlanMode.EXPERIMENT
        planner = make_planner(mode, task.d, spec, task.summary, eta_max)
        return doubling_run(
            lambda plan: LetC(plan, alternate=spec.alternate_burn_in, pool=spec.pool_stages),
            env,
            task.T,
            task.config.doubling.T0,
            rng,
            planner=planner,
        )
    policy = build_policy(task.policy, task.d, task.config, env.bounds, task.summary)
    return run(policy, env, task.T, rng)


def run_trial(task: TrialTask) -> TrialResult:
    """Run one trial; failures are recorded on the result instead of raised."""
    result = TrialResult(policy=task.policy, d=task.d, T=task.T, trial=task.trial, seed=task.seed)
    try:
        trace = _execute(task)
    except (LetcLabError, ValueError, np.linalg.LinAlgError) as e:
        logger.warning(
            "trial %s d=%d T=%d #%d (seed %d) failed: %s", task.policy, task.d, task.T, task.trial, task.seed, e
        )
        result.error = f"{type(e).__name__}: {e}"
        return result
    result.cumulative = trace.cumulative
    result.segments = list(trace.segments)
    result.diagnostics = trace.diagnostics.as_dict()
    return result


def _needs_spectrum(config: ExperimentConfig) -> bool:
    return config.planner.mode is PlanMode.GENERAL


def _spectra(config: ExperimentConfig) -> dict[int, SpectrumSummary | None]:
    if not _needs_spectrum(config):
        return {d: None for d in config.d_grid}
    return {d: instance_spectrum(config, d) for d in config.d_grid}


def grid_tasks(config: ExperimentConfig) -> list[TrialTask]:
    """Tasks in (policy, d, T, trial) order; this order is the output order."""
    spectra = _spectra(config)
    return [
        TrialTask(config, name, POLICY_NAMES.index(name), d, T, trial, spectra[d])
        for name in config.policies
        for d in config.d_grid
        for T in config.T_grid
        for trial in range(config.trials)
    ]


def _map(tasks: Sequence[TrialTask], workers: int) -> list[TrialResult]:
    if workers <= 1 or len(tasks) <= 1:
        return [run_trial(t) for t in tasks]
    chunksize = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_trial, tasks, chunksize=chunksize))


def run_grid(config: ExperimentConfig) -> list[TrialResult]:
    tasks = grid_tasks(config)
    logger.info("running %d trials on %d worker(s)", len(tasks), config.workers)
    results = _map(tasks, config.workers)
    failed = sum(not r.ok for r in results)
    if failed:
        logger.warning("%d of %d trials failed", failed, len(results))
    return results


# Aggregation


@dataclass
class AggregateRow:
    policy: str
    d: int
    T: int
    mean: float
    std: float
    slope: float = math.nan
    trials: int = 0
    single_trial: bool = False

    def as_record(self) -> dict:
        return {"policy": self.policy, "d": self.d, "T": self.T, "mean": self.mean, "std": self.std, "slope": self.slope}


def mean_std(values: Sequence[float]) -> tuple[float, float, bool]:
    """Mean, sample standard deviation (n - 1) and whether only one value was given (std 0 then)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return math.nan, math.nan, False
    if arr.size == 1:
        return float(arr[0]), 0.0, True
    return float(arr.mean()), float(arr.std(ddof=1)), False


def loglog_slope(points: Iterable[tuple[float, float]], window: int | None = None) -> float:
    """Least-squares slope of ln(regret) on ln(T) over the ``window`` largest T."""
    pts = sorted((float(T), float(r)) for T, r in points)
    if window is not None:
        pts = pts[-window:]
    if len(pts) < 2:
        raise ValueError(f"need at least two points for a slope, got {len(pts)}")
    Ts, regrets = np.array(pts).T
    if np.any(regrets <= 0.0) or np.any(Ts <= 0.0):
        raise ValueError("log-log slope needs positive horizons and regrets")
    slope = np.polyfit(np.log(Ts), np.log(regrets), 1)[0]
    return float(slope)


def aggregate(results: Sequence[TrialResult], window: int = 4) -> list[AggregateRow]:
    """Mean and spread of final cumulative regret per (policy, d, T), with a slope per (policy, d)."""
    cells: dict[tuple[str, int, int], list[float]] = {}
    for r in results:
        values = cells.setdefault((r.policy, r.d, r.T), [])
        if r.ok:
            values.append(r.final_regret)

    rows = []
    for (policy, d, T), values in cells.items():
        mean, std, single = mean_std(values)
        rows.append(AggregateRow(policy, d, T, mean, std, trials=len(values), single_trial=single))

    by_curve: dict[tuple[str, int], list[AggregateRow]] = {}
    for row in rows:
        by_curve.setdefault((row.policy, row.d), []).append(row)
    for (policy, d), curve in by_curve.items():
        try:
            slope = loglog_slope([(row.T, row.mean) for row in curve], window)
        except ValueError as e:
            logger.debug("no slope for %s d=%d: %s", policy, d, e)
            slope = math.nan
        for row in curve:
            row.slope = slope
    _log_time_varying_comparison(rows)
    return sorted(rows, key=lambda r: (POLICY_NAMES.index(r.policy) if r.policy in POLICY_NAMES else len(POLICY_NAMES), r.policy, r.d, r.T))


def _log_time_varying_comparison(rows: Sequence[AggregateRow]) -> None:
    letc = {(row.d, row.T): row.mean for row in rows if row.policy == "letc"}
    for row in rows:
        baseline = letc.get((row.d, row.T))
        if row.policy != "timevarying" or baseline is None:
            continue
        ratio = row.mean / baseline if baseline > 0.0 else math.nan
        logger.info(
            "time-varying eta vs LetC at d=%d T=%d: regret %.4g vs %.4g (ratio %.3g)", row.d, row.T, row.mean, baseline, ratio
        )


# Doubling


def complete_segment_ends(total_T: int, T0: int) -> list[int]:
    """Last steps of the segments that ran their full nominal length."""
    ends = []
    position, nominal = 0, T0
    for length in doubling_schedule(total_T, T0):
        position += length
        if length == nominal:
            ends.append(position)
        nominal *= 2
    return ends


def doubling_grid(config: ExperimentConfig) -> tuple[list[TrialResult], list[AggregateRow]]:
    """Replicated doubling runs per d; the slope is fit over the last complete segments."""
    spec = config.doubling
    spectra = _spectra(config)
    tasks = [
        TrialTask(config, "letc-doubling", DOUBLING_POLICY_INDEX, d, spec.total_T, trial, spectra[d], doubling=True)
        for d in config.d_grid
        for trial in range(config.trials)
    ]
    results = _map(tasks, config.workers)
    ends = complete_segment_ends(spec.total_T, spec.T0)[-(spec.slope_segments + 1) :]

    rows = []
    for d in config.d_grid:
        curves = [r.cumulative for r in results if r.d == d and r.ok]
        finals = [float(c[-1]) for c in curves]
        mean, std, single = mean_std(finals)
        slope = math.nan
        if curves and len(ends) >= 2:
            mean_curve = np.mean(np.vstack(curves), axis=0)
            try:
                slope = loglog_slope([(e, mean_curve[e - 1]) for e in ends])
            except ValueError as e:
                logger.debug("no doubling slope for d=%d: %s", d, e)
        rows.append(
            AggregateRow("letc-doubling", d, spec.total_T, mean, std, slope, trials=len(finals), single_trial=single)
        )
    return results, rows


# Output


def trace_frame(results: Sequence[TrialResult], stride: int = 1) -> pd.DataFrame:
    """Long table of cumulative regret; every ``stride``-th step plus the last one."""
    frames = []
    for r in results:
        if not r.ok:
            continue
        n = r.cumulative.shape[0]
        idx = np.arange(stride - 1, n, stride)
        if idx.size == 0 or idx[-1] != n - 1:
            idx = np.append(idx, n - 1)
        frames.append(
            pd.DataFrame(
                {
                    "policy": r.policy,
                    "d": r.d,
                    "T": r.T,
                    "trial": r.trial,
                    "t": idx + 1,
                    "cum_regret": r.cumulative[idx],
                }
            )
        )
    if not frames:
        return pd.DataFrame(columns=TRACE_HEADER)
    return pd.concat(frames, ignore_index=True)[TRACE_HEADER]


def aggregate_frame(rows: Sequence[AggregateRow]) -> pd.DataFrame:
    return pd.DataFrame([row.as_record() for row in rows], columns=AGGREGATE_HEADER)


def emit(
    results: Sequence[TrialResult],
    rows: Sequence[AggregateRow],
    config: ExperimentConfig,
    out_dir: Path | str,
    fmt: str = "both",
    *,
    prefix: str = "",
) -> list[Path]:
    """Write traces and aggregates as CSV and/or a JSON mirror carrying the config and its hash."""
    if fmt not in ("csv", "json", "both"):
        raise ValueError(f"unknown output format: {fmt}")
    out = Path(out_dir)
    written: list[Path] = []
    target = out
    try:
        out.mkdir(parents=True, exist_ok=True)
        if fmt in ("csv", "both"):
            if config.emit_traces:
                target = out / f"{prefix}traces.csv"
                trace_frame(results, config.trace_stride).to_csv(target, index=False)
                written.append(target)
            target = out / f"{prefix}aggregate.csv"
            aggregate_frame(rows).to_csv(target, index=False)
            written.append(target)
        if fmt in ("json", "both"):
            target = out / f"{prefix}results.json"
            payload = {
                "config": config.provenance(),
                "config_hash": config.config_hash(),
                "aggregate": [
                    {**row.as_record(), "trials": row.trials, "single_trial": row.single_trial} for row in rows
                ],
                "failures": [
                    {"policy": r.policy, "d": r.d, "T": r.T, "trial": r.trial, "seed": r.seed, "error": r.error}
                    for r in results
                    if not r.ok
                ],
            }
            target.write_text(json.dumps(payload, indent=2, allow_nan=True), encoding="utf-8")
            written.append(target)
    except OSError as e:
        raise EmitError(f"could not write results ({e.strerror or e})", str(target)) from e
    for path in written:
        logger.info("wrote %s", path)
    return written


def load_aggregate(path: Path | str) -> list[AggregateRow]:
    """Parse an aggregate CSV written by :func:`emit`."""
    try:
        frame = pd.read_csv(path)
    except OSError as e:
        raise EmitError(f"could not read aggregate ({e.strerror or e})", str(path)) from e
    if list(frame.columns) != AGGREGATE_HEADER:
        raise ValueError(f"unexpected aggregate header in {path}: {list(frame.columns)}")
    return [
        AggregateRow(
            policy=str(rec["policy"]),
            d=int(rec["d"]),
            T=int(rec["T"]),
            mean=float(rec["mean"]),
            std=float(rec["std"]),
            slope=float(rec["slope"]),
        )
        for rec in frame.to_dict("records")
    ]
