"""Contextual linear demand environment.

Mean demand is ``x'alpha + p * x'beta``; a seller posting price ``p`` for
context ``x`` earns expected revenue ``p * (x'alpha + p * x'beta)``. Regret is
always measured against expected revenue, never realized noisy revenue.
"""

import logging
from abc import ABC, abstractmethod
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike

from .errors import DegenerateSlope, DimensionMismatch, PriceOutOfBounds
from .linalg import Matrix, Vector, as_vector

logger = logging.getLogger(__name__)

SLOPE_EPS: float = 1e-8
DEFAULT_MARGIN_FRACTION: float = 0.05
PRICE_TOL: float = 1e-12


@dataclass(frozen=True)
class ModelParams:
    """Demand parameters theta = (alpha, beta), true or estimated."""

    alpha: Vector
    beta: Vector

    def __post_init__(self) -> None:
        alpha = as_vector(self.alpha, name="alpha")
        beta = as_vector(self.beta, alpha.shape[0], name="beta")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def dim(self) -> int:
        return int(self.alpha.shape[0])

    def as_vector(self) -> Vector:
        """Stacked (alpha, beta), the coefficient vector of the augmented design."""
        return np.concatenate([self.alpha, self.beta])

    @classmethod
    def from_vector(cls, theta: ArrayLike) -> "ModelParams":
        vec = as_vector(theta, name="theta")
        if vec.shape[0] % 2:
            raise DimensionMismatch(f"theta must have even length, got {vec.shape[0]}")
        d = vec.shape[0] // 2
        return cls(alpha=vec[:d].copy(), beta=vec[d:].copy())

    def null_vector(self) -> Vector:
        """The direction (alpha, 2 beta) that the optimal-price design never excites."""
        return np.concatenate([self.alpha, 2.0 * self.beta])


@dataclass(frozen=True)
class PriceBounds:
    """Feasible price interval [lower, upper] with interior margin.

    ``margin`` defaults to 5% of the interval width.
    """

    lower: float
    upper: float
    margin: float | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.lower < self.upper):
            raise ValueError(f"price bounds need 0 <= lower < upper, got [{self.lower}, {self.upper}]")
        if self.margin is None:
            object.__setattr__(self, "margin", DEFAULT_MARGIN_FRACTION * (self.upper - self.lower))
        if self.margin < 0.0 or 2.0 * self.margin >= self.upper - self.lower:
            raise ValueError(f"margin {self.margin} does not fit inside [{self.lower}, {self.upper}]")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def default_eta_max(self) -> float:
        return self.width / 4.0

    def contains(self, p: ArrayLike, tol: float = PRICE_TOL) -> bool:
        arr = np.asarray(p, dtype=np.float64)
        return bool(np.all((arr >= self.lower - tol) & (arr <= self.upper + tol)))


def clip(p: ArrayLike, bounds: PriceBounds) -> float | Vector:
    """Project prices onto [lower, upper]. Scalars in, scalar out."""
    clipped = np.clip(p, bounds.lower, bounds.upper)
    if np.ndim(clipped) == 0:
        return float(clipped)
    return clipped


def _check_context(theta: ModelParams, x: ArrayLike) -> Vector:
    return as_vector(x, theta.dim, name="x")


def mean_demand(theta: ModelParams, x: ArrayLike, p: float) -> float:
    """Expected demand x'alpha + p * x'beta."""
    ctx = _check_context(theta, x)
    return float(ctx @ theta.alpha + p * (ctx @ theta.beta))


def expected_revenue(theta: ModelParams, x: ArrayLike, p: float) -> float:
    return p * mean_demand(theta, x, p)


def _slope(theta: ModelParams, ctx: Vector, eps: float) -> float:
    slope = float(ctx @ theta.beta)
    if abs(slope) <= eps:
        raise DegenerateSlope(f"price slope {slope:.3e} is within {eps:g} of zero", slope=slope)
    return slope


def optimal_price(theta: ModelParams, x: ArrayLike, eps: float = SLOPE_EPS) -> float:
    """Unclipped revenue-maximizing price -x'alpha / (2 x'beta)."""
    ctx = _check_context(theta, x)
    slope = _slope(theta, ctx, eps)
    return float(-(ctx @ theta.alpha) / (2.0 * slope))


def optimal_revenue(theta: ModelParams, x: ArrayLike, eps: float = SLOPE_EPS) -> float:
    ctx = _check_context(theta, x)
    slope = _slope(theta, ctx, eps)
    intercept = float(ctx @ theta.alpha)
    return -(intercept**2) / (4.0 * slope)


def instantaneous_regret(theta_true: ModelParams, x: ArrayLike, p: float, eps: float = SLOPE_EPS) -> float:
    """Expected revenue lost by posting ``p`` instead of the optimal price."""
    ctx = _check_context(theta_true, x)
    slope = _slope(theta_true, ctx, eps)
    p_star = -(ctx @ theta_true.alpha) / (2.0 * slope)
    return float(-slope * (p - p_star) ** 2)


def optimal_prices(theta: ModelParams, X: Matrix, eps: float = SLOPE_EPS) -> tuple[Vector, np.ndarray]:
    """Row-wise unclipped optimal prices and the mask of degenerate slopes.

    Degenerate rows get NaN; callers decide on a fallback.
    """
    slopes = X @ theta.beta
    degenerate = np.abs(slopes) <= eps
    safe = np.where(degenerate, 1.0, slopes)
    prices = np.where(degenerate, np.nan, -(X @ theta.alpha) / (2.0 * safe))
    return prices, degenerate


def regret_batch(theta_true: ModelParams, X: Matrix, prices: Vector, eps: float = SLOPE_EPS) -> Vector:
    """Per-row instantaneous regret for a block of contexts and prices."""
    slopes = X @ theta_true.beta
    if np.any(np.abs(slopes) <= eps):
        worst = int(np.argmin(np.abs(slopes)))
        raise DegenerateSlope(f"true slope degenerate at row {worst}", slope=float(slopes[worst]))
    p_star = -(X @ theta_true.alpha) / (2.0 * slopes)
    return -slopes * (prices - p_star) ** 2


def mean_demands(theta: ModelParams, X: Matrix, prices: Vector) -> Vector:
    return X @ theta.alpha + prices * (X @ theta.beta)


# Ground-truth instances


def benchmark_theta(d: int) -> ModelParams:
    """Simulation benchmark: alpha = (1, .2, .2, 0, ...), beta = (-1, .2, .2, 0, ...).

    beta is the sign flip of (1, -.2, -.2, 0, ...), which keeps x'beta < 0
    on the whole feature support.
    """
    alpha = np.zeros(d)
    beta = np.zeros(d)
    alpha[0], beta[0] = 1.0, -1.0
    alpha[1:3] = 0.2
    beta[1:3] = 0.2
    return ModelParams(alpha=alpha, beta=beta)


def discrete_example_theta(d: int) -> ModelParams:
    """alpha = (1, 1/8, 0, ...), beta = (-1, 1/8, 0, ...)."""
    alpha = np.zeros(d)
    beta = np.zeros(d)
    alpha[0], beta[0] = 1.0, -1.0
    if d > 1:
        alpha[1] = beta[1] = 0.125
    return ModelParams(alpha=alpha, beta=beta)


def constant_price_theta(d: int, price: float = 1.0) -> ModelParams:
    """An instance whose optimal price is ``price`` for every context.

    alpha is proportional to beta, which makes the optimal-price design
    rank deficient in d directions instead of one.
    """
    beta = np.zeros(d)
    beta[0] = -1.0
    if d > 1:
        beta[1] = 0.2
    return ModelParams(alpha=-2.0 * price * beta, beta=beta)


# Feature samplers


class FeatureSampler(ABC):
    """Law of the context vectors x_t."""

    dim: int
    independent_coordinates: bool | None = None

    @abstractmethod
    def sample(self, n: int, rng: np.random.Generator, start: int = 0) -> Matrix:
        """Draw ``n`` contexts; ``start`` is the 0-based step index of the first one."""
        pass


class ConstantPlusUniform(FeatureSampler):
    """First coordinate 1, the rest i.i.d. Uniform[-1, 1]."""

    independent_coordinates = True

    def __init__(self, dim: int) -> None:
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        self.dim = dim

    def sample(self, n: int, rng: np.random.Generator, start: int = 0) -> Matrix:
        X = np.ones((n, self.dim))
        if self.dim > 1:
            X[:, 1:] = rng.uniform(-1.0, 1.0, size=(n, self.dim - 1))
        return X


class FiniteSupport(FeatureSampler):
    """Contexts drawn from finitely many points with given probabilities."""

    points: Matrix
    probabilities: Vector

    def __init__(self, points: ArrayLike, probabilities: ArrayLike) -> None:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        probs = np.asarray(probabilities, dtype=np.float64)
        if probs.ndim != 1 or probs.shape[0] != pts.shape[0]:
            raise DimensionMismatch(f"{pts.shape[0]} points but {probs.size} probabilities")
        if np.any(probs < 0.0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be non-negative and sum to 1")
        self.points = pts
        self.probabilities = probs / probs.sum()
        self.dim = int(pts.shape[1])

    def sample(self, n: int, rng: np.random.Generator, start: int = 0) -> Matrix:
        idx = rng.choice(self.points.shape[0], size=n, p=self.probabilities)
        return self.points[idx].copy()

    def marginals(self) -> list[tuple[Vector, Vector]]:
        """Per-coordinate (values, probabilities), summing joint mass over ties."""
        result = []
        for j in range(self.dim):
            values, inverse = np.unique(self.points[:, j], return_inverse=True)
            mass = np.bincount(inverse, weights=self.probabilities, minlength=values.shape[0])
            result.append((values, mass))
        return result

    def is_product_measure(self) -> bool:
        """Whether the joint law factorizes into its marginals."""
        marginals = self.marginals()
        support = 1
        for _, mass in marginals:
            support *= int(np.count_nonzero(mass > 0))
        if int(np.count_nonzero(self.probabilities > 0)) != support:
            return False
        for point, prob in zip(self.points, self.probabilities):
            expected = 1.0
            for j, (values, mass) in enumerate(marginals):
                expected *= float(mass[np.searchsorted(values, point[j])])
            if abs(expected - prob) > 1e-9:
                return False
        return True


class DiscreteExample(FeatureSampler):
    """Independent discrete coordinates with matched second and heavier fourth moments.

    x_1 is 1/2 w.p. 4/5 and 2 w.p. 1/5; every other coordinate is +-2 w.p.
    1/8 each and 0 w.p. 3/4.
    """

    independent_coordinates = True
    FIRST_VALUES = np.array([0.5, 2.0])
    FIRST_PROBS = np.array([0.8, 0.2])
    REST_VALUES = np.array([2.0, -2.0, 0.0])
    REST_PROBS = np.array([0.125, 0.125, 0.75])

    def __init__(self, dim: int) -> None:
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        self.dim = dim

    def sample(self, n: int, rng: np.random.Generator, start: int = 0) -> Matrix:
        X = np.empty((n, self.dim))
        X[:, 0] = rng.choice(self.FIRST_VALUES, size=n, p=self.FIRST_PROBS)
        if self.dim > 1:
            X[:, 1:] = rng.choice(self.REST_VALUES, size=(n, self.dim - 1), p=self.REST_PROBS)
        return X

    def marginals(self) -> list[tuple[Vector, Vector]]:
        rest = [(self.REST_VALUES.copy(), self.REST_PROBS.copy()) for _ in range(self.dim - 1)]
        return [(self.FIRST_VALUES.copy(), self.FIRST_PROBS.copy()), *rest]


# Noise models


class NoiseModel(ABC):
    """How realized demand scatters around the mean."""

    @abstractmethod
    def draw(self, means: Vector, rng: np.random.Generator) -> tuple[Vector, int]:
        """Return realized demands and the number of means clamped to zero."""
        pass


@dataclass(frozen=True)
class GaussianShock(NoiseModel):
    """Additive N(0, sigma^2) shock."""

    sigma: float

    def __post_init__(self) -> None:
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")

    def draw(self, means: Vector, rng: np.random.Generator) -> tuple[Vector, int]:
        if self.sigma == 0.0:
            return means.astype(np.float64, copy=True), 0
        return means + self.sigma * rng.standard_normal(means.shape[0]), 0


@dataclass(frozen=True)
class PoissonDemand(NoiseModel):
    """D ~ Poisson(mean); negative means are clamped to zero and counted."""

    def draw(self, means: Vector, rng: np.random.Generator) -> tuple[Vector, int]:
        negative = int(np.count_nonzero(means < 0.0))
        return rng.poisson(np.maximum(means, 0.0)).astype(np.float64), negative


@dataclass(frozen=True)
class Interaction:
    """One round of the online protocol. ``t`` is 1-based."""

    x: Vector
    p: float
    demand: float
    t: int


PriceRule = Callable[[Vector], float]


@dataclass
class DemandEnvironment:
    """Per-trial pricing environment.

    Contexts and demand responses are drawn separately so that a policy can
    see x_t before choosing p_t.
    """

    theta: ModelParams
    sampler: FeatureSampler
    noise: NoiseModel
    bounds: PriceBounds
    t: int = 0
    poisson_clamps: int = 0
    eps: float = field(default=SLOPE_EPS)

    def __post_init__(self) -> None:
        if self.sampler.dim != self.theta.dim:
            raise DimensionMismatch(
                f"sampler dimension {self.sampler.dim} does not match theta dimension {self.theta.dim}"
            )

    @property
    def dim(self) -> int:
        return self.theta.dim

    def reset(self) -> None:
        self.t = 0
        self.poisson_clamps = 0

    def draw_contexts(self, n: int, rng: np.random.Generator) -> Matrix:
        """Draw the next ``n`` contexts and advance the clock."""
        X = self.sampler.sample(n, rng, start=self.t)
        self.t += n
        return X

    def respond(self, X: Matrix, prices: ArrayLike, rng: np.random.Generator) -> Vector:
        """Realized demands for posted prices."""
        p = np.asarray(prices, dtype=np.float64)
        if not self.bounds.contains(p):
            raise PriceOutOfBounds(
                f"price outside [{self.bounds.lower}, {self.bounds.upper}]: "
                f"min {float(np.min(p)):.6g}, max {float(np.max(p)):.6g}"
            )
        means = mean_demands(self.theta, X, p)
        demands, clamped = self.noise.draw(means, rng)
        if clamped:
            self.poisson_clamps += clamped
            logger.debug("clamped %d negative Poisson means at t=%d", clamped, self.t)
        return demands

    def step(self, price: float | PriceRule, rng: np.random.Generator) -> Interaction:
        """Run one round: draw x, post ``price`` (a number or a rule of x), observe demand."""
        X = self.draw_contexts(1, rng)
        x = X[0]
        p = float(price(x)) if callable(price) else float(price)
        demand = self.respond(X, np.array([p]), rng)
        return Interaction(x=x, p=p, demand=float(demand[0]), t=self.t)

    def regret(self, X: Matrix, prices: Vector) -> Vector:
        return regret_batch(self.theta, X, prices, self.eps)


@dataclass(frozen=True)
class AssumptionReport:
    """Empirical check that an instance keeps demand and slopes bounded away from zero."""

    n_samples: int
    intercept_range: tuple[float, float]
    slope_range: tuple[float, float]
    price_range: tuple[float, float]
    interior_fraction: float
    b1: float
    b2: float

    @property
    def satisfied(self) -> bool:
        return self.b1 > 0.0 and self.interior_fraction == 1.0


def assumption_report(
    theta: ModelParams,
    sampler: FeatureSampler,
    bounds: PriceBounds,
    n_samples: int,
    rng: np.random.Generator,
) -> AssumptionReport:
    """Record the empirical ranges of x'alpha, -x'beta and p*(x) over a sample."""
    X = sampler.sample(n_samples, rng)
    intercepts = X @ theta.alpha
    neg_slopes = -(X @ theta.beta)
    prices, degenerate = optimal_prices(theta, X)
    valid = prices[~degenerate]
    lo = bounds.lower + bounds.margin
    hi = bounds.upper - bounds.margin
    interior = float(np.mean((prices >= lo) & (prices <= hi) & ~degenerate))
    return AssumptionReport(
        n_samples=n_samples,
        intercept_range=(float(intercepts.min()), float(intercepts.max())),
        slope_range=(float(neg_slopes.min()), float(neg_slopes.max())),
        price_range=(float(valid.min()), float(valid.max())) if valid.size else (float("nan"), float("nan")),
        interior_fraction=interior,
        b1=float(min(intercepts.min(), neg_slopes.min())),
        b2=float(max(intercepts.max(), neg_slopes.max())),
    )
