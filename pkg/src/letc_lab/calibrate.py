"""Semi-synthetic evaluation from historical sales.

A product's history is turned into a simulation environment by treating a
fitted linear demand model as the truth, modeling competitor prices per
weekday, and replaying customers through rejection sampling with Poisson
demand. LetC is then compared against a static offline policy that imitates
the historical prices with RBF kernel ridge regression.
"""

import logging
import zlib
from collections.abc import Sequence
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd
from sklearn.kernel_ridge import KernelRidge
from sklearn.mixture import GaussianMixture

from .demand import DemandEnvironment, FeatureSampler, ModelParams, PoissonDemand, PriceBounds
from .errors import InsufficientData, ProductDiscarded, SingularSystem
from .estimator import DesignStats, ols_fit
from .linalg import Matrix, Vector, clamp_eigenvalues, symmetric_eigen
from .policies import LetC, Oracle, StaticOffline, doubling_run, make_planner, run
from .policies.base import BasePolicy, RegretTrace
from .schema import (
    SALES_COLUMNS,
    CalibrationReport,
    EvaluationSettings,
    PlanMode,
    PlannerSpec,
    RevenueRow,
    SalesRecord,
    WeekdayFeatureParams,
)

logger = logging.getLogger(__name__)

WEEKDAYS: tuple[str, ...] = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")
N_FEATURES: int = 9
MIN_DEMAND_RECORDS: int = 2 * N_FEATURES
MIN_PER_WEEKDAY: int = 3
MAX_TRIES: int = 10_000
DAYS_PER_YEAR: int = 365


# Features


def weekday_features(weekday: int, comp: Matrix) -> Matrix:
    """Rows (one-hot weekday, comp_min, comp_max) for a block of competitor prices."""
    X = np.zeros((comp.shape[0], N_FEATURES))
    X[:, weekday] = 1.0
    X[:, 7:] = comp
    return X


def encode_features(record: SalesRecord) -> Vector:
    """Nine features: Mon..Sun indicators, then comp_min and comp_max."""
    x = np.zeros(N_FEATURES)
    x[record.date.weekday()] = 1.0
    x[7] = record.comp_min
    x[8] = record.comp_max
    return x


def _arrays(records: Sequence[SalesRecord]) -> tuple[Matrix, Vector, Vector]:
    X = np.vstack([encode_features(r) for r in records])
    prices = np.array([r.price for r in records], dtype=np.float64)
    units = np.array([r.units_sold for r in records], dtype=np.float64)
    return X, prices, units


def load_sales(path: Path | str) -> dict[str, list[SalesRecord]]:
    """Read a sales CSV and group validated records by product, in file order."""
    frame = pd.read_csv(path, dtype={"product_id": str})
    missing = [c for c in SALES_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"sales file {path} is missing columns: {', '.join(missing)}")
    return frame_records(frame)


def product_bounds(records: Sequence[SalesRecord]) -> PriceBounds:
    """Median allowed range over the history."""
    if not records:
        raise InsufficientData("no records to take price bounds from")
    lower = float(np.median([r.min_allowed for r in records]))
    upper = float(np.median([r.max_allowed for r in records]))
    if upper <= lower:
        raise InsufficientData(f"allowed price range is empty: [{lower}, {upper}]")
    return PriceBounds(lower, upper)


# Ground truth


def fit_linear_demand(records: Sequence[SalesRecord]) -> ModelParams:
    """Least-squares linear demand on the nine features; bounds play no part."""
    if len(records) < MIN_DEMAND_RECORDS:
        raise InsufficientData(f"need at least {MIN_DEMAND_RECORDS} records, got {len(records)}")
    X, prices, units = _arrays(records)
    return ols_fit(DesignStats.from_arrays(X, prices, units))


@dataclass(frozen=True)
class WeekdayGaussian:
    """Mixture of bivariate Gaussians for (comp_min, comp_max) on one weekday."""

    weights: Vector
    means: Matrix
    covariances: np.ndarray

    @property
    def n_components(self) -> int:
        return int(self.weights.shape[0])

    def sample(self, n: int, rng: np.random.Generator) -> Matrix:
        if self.n_components == 1:
            return rng.multivariate_normal(self.means[0], self.covariances[0], size=n)
        labels = rng.choice(self.n_components, size=n, p=self.weights)
        out = np.empty((n, 2))
        for k in range(self.n_components):
            mask = labels == k
            out[mask] = rng.multivariate_normal(self.means[k], self.covariances[k], size=int(mask.sum()))
        return out


def _psd(cov: Matrix) -> Matrix:
    eig = symmetric_eigen(cov)
    values = clamp_eigenvalues(eig.eigenvalues, rel_tol=1e-6)
    return (eig.eigenvectors * values) @ eig.eigenvectors.T


def fit_weekday_gaussian(pairs: Matrix, n_components: int = 1, random_state: int | None = None) -> WeekdayGaussian:
    """Sample mean and covariance (n - 1 denominator), or a full-covariance mixture."""
    if pairs.shape[0] < max(2, n_components):
        raise InsufficientData(f"need at least {max(2, n_components)} competitor-price pairs, got {pairs.shape[0]}")
    if n_components == 1:
        cov = np.cov(pairs, rowvar=False, ddof=1)
        return WeekdayGaussian(
            weights=np.ones(1),
            means=pairs.mean(axis=0)[None, :],
            covariances=_psd(cov)[None, :, :],
        )
    mixture = GaussianMixture(n_components=n_components, covariance_type="full", random_state=random_state)
    mixture.fit(pairs)
    return WeekdayGaussian(
        weights=mixture.weights_,
        means=mixture.means_,
        covariances=np.stack([_psd(c) for c in mixture.covariances_]),
    )


@dataclass(frozen=True)
class FeatureModel:
    """Competitor-price model for each weekday, Mon..Sun."""

    weekdays: tuple[WeekdayGaussian, ...]

    def __post_init__(self) -> None:
        if len(self.weekdays) != 7:
            raise ValueError(f"need one model per weekday, got {len(self.weekdays)}")

    def sample(self, weekday: int, n: int, rng: np.random.Generator) -> Matrix:
        return self.weekdays[weekday].sample(n, rng)

    def to_params(self) -> list[WeekdayFeatureParams]:
        return [
            WeekdayFeatureParams(
                weekday=w,
                weights=g.weights.tolist(),
                means=g.means.tolist(),
                covariances=g.covariances.tolist(),
            )
            for w, g in enumerate(self.weekdays)
        ]


def fit_feature_model(
    records: Sequence[SalesRecord],
    n_components: int = 1,
    *,
    min_per_weekday: int = MIN_PER_WEEKDAY,
    random_state: int | None = 0,
) -> FeatureModel:
    by_day: list[list[tuple[float, float]]] = [[] for _ in WEEKDAYS]
    for r in records:
        by_day[r.date.weekday()].append((r.comp_min, r.comp_max))
    models = []
    for w, pairs in enumerate(by_day):
        if len(pairs) < min_per_weekday:
            raise InsufficientData(f"{WEEKDAYS[w]} has {len(pairs)} records, need {min_per_weekday}")
        models.append(fit_weekday_gaussian(np.array(pairs), n_components, random_state))
    return FeatureModel(tuple(models))


# Rejection sampling


@dataclass(frozen=True)
class Discard:
    """No acceptable feature within the try budget."""

    weekday: int
    tries: int
    rejected_order: int
    rejected_demand: int

    def as_dict(self) -> dict:
        return {
            "weekday": WEEKDAYS[self.weekday],
            "tries": self.tries,
            "rejected_order": self.rejected_order,
            "rejected_demand": self.rejected_demand,
        }


def _acceptable(X: Matrix, theta: ModelParams, bounds: PriceBounds) -> tuple[np.ndarray, np.ndarray]:
    ordered = X[:, 7] < X[:, 8]
    intercept = X @ theta.alpha
    slope = X @ theta.beta
    positive = (intercept + bounds.lower * slope > 0.0) & (intercept + bounds.upper * slope > 0.0)
    return ordered, positive


def rejection_sample_many(
    feature_model: FeatureModel,
    theta_true: ModelParams,
    bounds: PriceBounds,
    weekday: int,
    n: int,
    rng: np.random.Generator,
    max_tries: int = MAX_TRIES,
    batch_size: int = 256,
) -> Matrix | Discard:
    """Draw ``n`` accepted features for one weekday.

    A candidate is accepted when comp_min < comp_max and mean demand is
    positive at both ends of the price range, which by linearity in price
    keeps it positive in between. ``max_tries`` consecutive rejections give
    a :class:`Discard`.
    """
    out = np.empty((n, N_FEATURES))
    filled = 0
    since_accept = 0
    rejected_order = rejected_demand = 0
    while filled < n:
        size = min(batch_size, max_tries - since_accept)
        if size <= 0:
            return Discard(weekday, since_accept, rejected_order, rejected_demand)
        X = weekday_features(weekday, feature_model.sample(weekday, size, rng))
        ordered, positive = _acceptable(X, theta_true, bounds)
        rejected_order += int(np.count_nonzero(~ordered))
        rejected_demand += int(np.count_nonzero(ordered & ~positive))
        accepted = np.flatnonzero(ordered & positive)
        if accepted.size == 0:
            since_accept += size
            continue
        take = accepted[: n - filled]
        out[filled : filled + take.shape[0]] = X[take]
        filled += take.shape[0]
        since_accept = 0
    return out


def rejection_sample(
    feature_model: FeatureModel,
    theta_true: ModelParams,
    bounds: PriceBounds,
    weekday: int,
    rng: np.random.Generator,
    max_tries: int = MAX_TRIES,
) -> Vector | Discard:
    result = rejection_sample_many(feature_model, theta_true, bounds, weekday, 1, rng, max_tries)
    return result if isinstance(result, Discard) else result[0]


class WeekdayCompetitorSampler(FeatureSampler):
    """Contexts for consecutive days, cycling Mon..Sun from ``first_weekday``."""

    independent_coordinates = False

    def __init__(
        self,
        feature_model: FeatureModel,
        theta_true: ModelParams,
        bounds: PriceBounds,
        max_tries: int = MAX_TRIES,
        first_weekday: int = 0,
    ) -> None:
        self.dim = N_FEATURES
        self.feature_model = feature_model
        self.theta_true = theta_true
        self.bounds = bounds
        self.max_tries = max_tries
        self.first_weekday = first_weekday

    def weekdays(self, n: int, start: int = 0) -> np.ndarray:
        return (self.first_weekday + start + np.arange(n)) % 7

    def sample(self, n: int, rng: np.random.Generator, start: int = 0) -> Matrix:
        days = self.weekdays(n, start)
        X = np.empty((n, N_FEATURES))
        for w in range(7):
            mask = days == w
            count = int(mask.sum())
            if not count:
                continue
            rows = rejection_sample_many(
                self.feature_model, self.theta_true, self.bounds, w, count, rng, self.max_tries
            )
            if isinstance(rows, Discard):
                raise ProductDiscarded(f"no acceptable {WEEKDAYS[w]} feature in {rows.tries} tries", rows.as_dict())
            X[mask] = rows
        return X


def build_environment(
    theta_true: ModelParams,
    feature_model: FeatureModel,
    bounds: PriceBounds,
    *,
    max_tries: int = MAX_TRIES,
    probe_rng: np.random.Generator | None = None,
) -> DemandEnvironment:
    """Poisson-demand environment over rejection-sampled weekday features.

    Every weekday is probed once up front so that an unsuitable product
    fails here with :class:`ProductDiscarded` rather than mid-run.
    """
    rng = probe_rng if probe_rng is not None else np.random.default_rng(0)
    for w in range(7):
        probe = rejection_sample(feature_model, theta_true, bounds, w, rng, max_tries)
        if isinstance(probe, Discard):
            raise ProductDiscarded(f"no acceptable {WEEKDAYS[w]} feature in {probe.tries} tries", probe.as_dict())
    sampler = WeekdayCompetitorSampler(feature_model, theta_true, bounds, max_tries)
    return DemandEnvironment(theta=theta_true, sampler=sampler, noise=PoissonDemand(), bounds=bounds)


# Offline policy


@dataclass(frozen=True)
class KrrModel:
    """Fitted RBF kernel ridge regression; dual coefficients solve (K + alpha I) c = y."""

    estimator: KernelRidge
    gamma: float
    alpha: float

    @property
    def support(self) -> Matrix:
        return self.estimator.X_fit_

    @property
    def dual_coef(self) -> Vector:
        return np.ravel(self.estimator.dual_coef_)


def krr_fit(features: Matrix, targets: Vector, gamma: float = 0.05, alpha: float = 0.2) -> KrrModel:
    if gamma <= 0.0 or alpha <= 0.0:
        raise ValueError("gamma and alpha must be positive")
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if X.shape[0] < 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"need matching non-empty features and targets, got {X.shape[0]} and {y.shape[0]}")
    estimator = KernelRidge(alpha=alpha, kernel="rbf", gamma=gamma)
    estimator.fit(X, y)
    return KrrModel(estimator=estimator, gamma=gamma, alpha=alpha)


def krr_predict(model: KrrModel, x: Matrix | Vector) -> Vector | float:
    """Predictions for a block of rows, or a float for a single row."""
    arr = np.asarray(x, dtype=np.float64)
    predictions = np.ravel(model.estimator.predict(np.atleast_2d(arr)))
    return float(predictions[0]) if arr.ndim == 1 else predictions


def offline_policy(
    records: Sequence[SalesRecord],
    settings: EvaluationSettings,
    rng: np.random.Generator,
) -> StaticOffline:
    """Price as a kernel-ridge function of the features, fit on (a subsample of) the history."""
    X, prices, _ = _arrays(records)
    if X.shape[0] > settings.max_krr_samples:
        keep = np.sort(rng.choice(X.shape[0], size=settings.max_krr_samples, replace=False))
        X, prices = X[keep], prices[keep]
    model = krr_fit(X, prices, settings.krr_gamma, settings.krr_alpha)
    return StaticOffline(lambda contexts: krr_predict(model, contexts), name="offline")


# Evaluation


@dataclass
class PolicyRevenue:
    expected_revenue: float
    trace: RegretTrace


def evaluate_policy_revenue(
    policy: BasePolicy,
    env: DemandEnvironment,
    horizon: int,
    rng: np.random.Generator,
) -> PolicyRevenue:
    """Sum of price times expected demand under the calibrated truth."""
    if horizon < 1:
        raise ValueError(f"horizon must be positive, got {horizon}")
    trace = run(policy, env, horizon, rng)
    return PolicyRevenue(expected_revenue=float(trace.revenue.sum()), trace=trace)


def improvement(revenue: float, baseline: float) -> float:
    """Percentage revenue improvement over ``baseline``."""
    if baseline <= 0.0:
        raise ValueError(f"baseline revenue must be positive, got {baseline}")
    return (revenue - baseline) / baseline * 100.0


def _trial_rng(settings: EvaluationSettings, product_id: str, trial: int) -> np.random.Generator:
    key = zlib.crc32(product_id.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([settings.base_seed, key, trial]))


def _letc(settings: EvaluationSettings) -> LetC:
    spec = PlannerSpec(mode=PlanMode.EXPERIMENT, C1=settings.C1, C2=settings.C2, C3=settings.C3)
    return LetC(planner=make_planner(PlanMode.EXPERIMENT, N_FEATURES, spec), pool=settings.pool_stages)


def _std(values: Sequence[float]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


@dataclass
class Calibration:
    """Everything rebuilt from one product's history."""

    product_id: str
    records: list[SalesRecord]
    theta: ModelParams
    feature_model: FeatureModel
    bounds: PriceBounds
    environment: DemandEnvironment
    offline: StaticOffline


def calibrate_product(records: Sequence[SalesRecord], settings: EvaluationSettings, product_id: str) -> Calibration:
    """Fit the truth, the feature model and the offline policy; raise if the product is unsuitable."""
    bounds = product_bounds(records)
    theta = fit_linear_demand(records)
    features = fit_feature_model(records, settings.n_components, random_state=settings.base_seed % 2**32)
    rng = np.random.default_rng(np.random.SeedSequence([settings.base_seed, zlib.crc32(product_id.encode("utf-8"))]))
    env = build_environment(theta, features, bounds, max_tries=settings.max_tries, probe_rng=rng)
    return Calibration(
        product_id=product_id,
        records=list(records),
        theta=theta,
        feature_model=features,
        bounds=bounds,
        environment=env,
        offline=offline_policy(records, settings, rng),
    )


def _discarded(report: CalibrationReport, e: Exception) -> CalibrationReport:
    logger.info("discarding product %s: %s", report.product_id, e)
    details = e.report if isinstance(e, ProductDiscarded) else None
    return report.model_copy(
        update={"status": "discarded", "discard_reason": str(e), "discard_details": details, "revenue": []}
    )


def _fitted(records: Sequence[SalesRecord], settings: EvaluationSettings, product_id: str) -> tuple[CalibrationReport, Calibration | None]:
    report = CalibrationReport(product_id=product_id, n_records=len(records))
    try:
        cal = calibrate_product(records, settings, product_id)
    except (ProductDiscarded, InsufficientData, SingularSystem) as e:
        return _discarded(report, e), None
    fitted = report.model_copy(
        update={
            "alpha": cal.theta.alpha.tolist(),
            "beta": cal.theta.beta.tolist(),
            "lower": cal.bounds.lower,
            "upper": cal.bounds.upper,
            "feature_model": cal.feature_model.to_params(),
        }
    )
    return fitted, cal


def calibration_report(records: Sequence[SalesRecord], settings: EvaluationSettings, product_id: str) -> CalibrationReport:
    """Fitted truth and feature model of one product, or its discard status."""
    return _fitted(records, settings, product_id)[0]


def compare_policies(cal: Calibration, settings: EvaluationSettings) -> list[RevenueRow]:
    """Revenue of the offline policy, LetC and the oracle on one calibrated product.

    Raises :class:`ProductDiscarded` when the feature sampler gives up mid-run.
    """
    product_id = cal.product_id
    policies: list[BasePolicy] = [cal.offline, _letc(settings), Oracle()]
    revenue: dict[str, list[float]] = {p.name: [] for p in policies}
    regret: dict[str, list[float]] = {p.name: [] for p in policies}
    for trial in range(settings.trials):
        for policy in policies:
            outcome = evaluate_policy_revenue(policy, cal.environment, settings.horizon, _trial_rng(settings, product_id, trial))
            revenue[policy.name].append(outcome.expected_revenue)
            regret[policy.name].append(outcome.trace.total)

    baseline = float(np.mean(revenue[cal.offline.name]))
    rows = []
    for name, values in revenue.items():
        mean = float(np.mean(values))
        rows.append(
            RevenueRow(
                policy=name,
                mean_revenue=mean,
                std_revenue=_std(values),
                trials=len(values),
                improvement_pct=improvement(mean, baseline) if baseline > 0.0 else None,
                mean_regret=float(np.mean(regret[name])),
            )
        )
    return rows


def evaluate_product(records: Sequence[SalesRecord], settings: EvaluationSettings, product_id: str) -> CalibrationReport:
    """Calibrate one product and compare LetC, the offline policy and the oracle over one horizon.

    A product whose sampler gives up during the runs is reported as discarded.
    """
    report, cal = _fitted(records, settings, product_id)
    if cal is None:
        return report
    try:
        rows = compare_policies(cal, settings)
    except ProductDiscarded as e:
        return _discarded(report, e)
    return report.model_copy(update={"revenue": rows})


def long_horizon_regret(
    records: Sequence[SalesRecord],
    settings: EvaluationSettings,
    product_id: str,
    years: int = 5,
) -> pd.DataFrame:
    """Mean and standard deviation of cumulative regret per day for doubling LetC and the offline policy.

    Columns: policy, t, mean, std.
    """
    if years < 1:
        raise ValueError(f"years must be positive, got {years}")
    cal = calibrate_product(records, settings, product_id)
    total = DAYS_PER_YEAR * years
    spec = PlannerSpec(mode=PlanMode.EXPERIMENT, C1=settings.C1, C2=settings.C2, C3=settings.C3)
    planner = make_planner(PlanMode.EXPERIMENT, N_FEATURES, spec)
    curves: dict[str, list[Vector]] = {"letc-doubling": [], cal.offline.name: []}
    for trial in range(settings.trials):
        rng = _trial_rng(settings, product_id, trial)
        doubled = doubling_run(
            lambda plan: LetC(plan, pool=settings.pool_stages),
            cal.environment,
            total,
            settings.doubling_T0,
            rng,
            planner=planner,
        )
        curves["letc-doubling"].append(doubled.cumulative)
        curves[cal.offline.name].append(run(cal.offline, cal.environment, total, _trial_rng(settings, product_id, trial)).cumulative)

    frames = []
    steps = np.arange(1, total + 1)
    for name, traces in curves.items():
        stacked = np.vstack(traces)
        std = stacked.std(axis=0, ddof=1) if stacked.shape[0] > 1 else np.zeros(total)
        frames.append(pd.DataFrame({"policy": name, "t": steps, "mean": stacked.mean(axis=0), "std": std}))
    return pd.concat(frames, ignore_index=True)


# Synthetic history


def synthetic_truth(rng: np.random.Generator) -> ModelParams:
    """Weekday intercepts near 220, competitor effects near 4, slopes near -10."""
    alpha = np.concatenate([10.0 * (22.0 + rng.uniform(-1.0, 1.0, 7)), 4.0 * (1.0 + rng.uniform(-0.1, 0.1, 2))])
    beta = np.concatenate([-10.0 * (1.0 + rng.uniform(-0.05, 0.05, 7)), [0.05, 0.05]])
    return ModelParams(alpha=alpha, beta=beta)


def generate_sales(
    n_products: int,
    n_days: int,
    seed: int = 0,
    *,
    start: date = date(2023, 1, 2),
    lower: float = 5.0,
    upper: float = 22.0,
    price_noise: float = 2.0,
) -> tuple[pd.DataFrame, dict[str, ModelParams]]:
    """Historical sales for ``n_products`` products over ``n_days`` consecutive days.

    The seller historically priced just under the cheaper competitor, so the
    recorded prices sit well below the revenue-optimal ones. Returns the
    sales table and the true demand parameters of each product.
    """
    if n_products < 1 or n_days < 1:
        raise ValueError("need at least one product and one day")
    rng = np.random.default_rng(seed)
    days = [start + timedelta(days=k) for k in range(n_days)]
    weekdays = np.array([d.weekday() for d in days])
    frames = []
    truths: dict[str, ModelParams] = {}
    for i in range(n_products):
        product_id = f"SKU-{i + 1:03d}"
        theta = synthetic_truth(rng)
        truths[product_id] = theta
        shift = rng.uniform(-0.5, 0.5, size=(7, 2))
        comp = rng.multivariate_normal([8.0, 12.0], [[1.0, 0.5], [0.5, 1.0]], size=n_days) + shift[weekdays]
        comp = np.maximum(comp, 0.0)
        prices = np.clip(0.95 * comp[:, 0] + price_noise * rng.standard_normal(n_days), lower, upper)
        X = np.zeros((n_days, N_FEATURES))
        X[np.arange(n_days), weekdays] = 1.0
        X[:, 7:] = comp
        means = X @ theta.alpha + prices * (X @ theta.beta)
        frames.append(
            pd.DataFrame(
                {
                    "product_id": product_id,
                    "date": [d.isoformat() for d in days],
                    "price": prices,
                    "units_sold": rng.poisson(np.maximum(means, 0.0)),
                    "comp_min": comp[:, 0],
                    "comp_max": comp[:, 1],
                    "min_allowed": lower,
                    "max_allowed": upper,
                }
            )
        )
    return pd.concat(frames, ignore_index=True)[SALES_COLUMNS], truths


def frame_records(frame: pd.DataFrame) -> dict[str, list[SalesRecord]]:
    """Validate a sales table into records grouped by product."""
    grouped: dict[str, list[SalesRecord]] = {}
    for row in frame[SALES_COLUMNS].to_dict("records"):
        record = SalesRecord.model_validate(row)
        grouped.setdefault(record.product_id, []).append(record)
    return grouped
