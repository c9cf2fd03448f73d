"""Least squares on the augmented design z = (x, x * p).

Demand is linear in z with coefficient theta = (alpha, beta), so every
estimate in the policies is an ordinary least-squares fit of demand on z,
solved through the normal equations ``gram @ theta = moment``.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from .demand import Interaction, ModelParams, PriceBounds, optimal_prices
from .errors import DimensionMismatch, SingularSystem
from .linalg import Matrix, Vector, as_vector, outer_accumulate, solve_spd, symmetric_eigen, trace_inverse

logger = logging.getLogger(__name__)

RANK_TOL: float = 1e-12


def augment(x: ArrayLike, p: float) -> Vector:
    """z = (x, x * p)."""
    ctx = as_vector(x, name="x")
    return np.concatenate([ctx, ctx * p])


def augment_batch(X: Matrix, prices: Vector) -> Matrix:
    return np.hstack([X, X * prices[:, None]])


@dataclass
class Diagnostics:
    """Counters a policy run accumulates."""

    singular_fits: int = 0
    fallback_prices: int = 0
    clip_activations: int = 0
    poisson_clamps: int = 0
    design_min_eig: float = float("nan")

    def as_dict(self) -> dict[str, float]:
        return {
            "singular_fits": self.singular_fits,
            "fallback_prices": self.fallback_prices,
            "clip_activations": self.clip_activations,
            "poisson_clamps": self.poisson_clamps,
            "design_min_eig": self.design_min_eig,
        }


@dataclass
class DesignStats:
    """Running means of z z' and z D over the interactions seen so far."""

    gram: Matrix
    moment: Vector
    count: int = 0

    @classmethod
    def empty(cls, d: int) -> "DesignStats":
        return cls(gram=np.zeros((2 * d, 2 * d)), moment=np.zeros(2 * d), count=0)

    @classmethod
    def from_arrays(cls, X: Matrix, prices: Vector, demands: Vector) -> "DesignStats":
        n, d = X.shape
        if n == 0:
            return cls.empty(d)
        Z = augment_batch(X, prices)
        gram = Z.T @ Z / n
        return cls(gram=0.5 * (gram + gram.T), moment=Z.T @ demands / n, count=n)

    @property
    def dim(self) -> int:
        """Context dimension d (half the augmented dimension)."""
        return self.moment.shape[0] // 2

    def merged(self, other: "DesignStats") -> "DesignStats":
        """Pooled statistics of two disjoint batches."""
        total = self.count + other.count
        if total == 0:
            return DesignStats.empty(self.dim)
        w = self.count / total
        return DesignStats(
            gram=w * self.gram + (1.0 - w) * other.gram,
            moment=w * self.moment + (1.0 - w) * other.moment,
            count=total,
        )


def accumulate(stats: DesignStats, interaction: Interaction) -> DesignStats:
    """Fold one interaction into ``stats`` in place and return it."""
    if interaction.x.shape[0] != stats.dim:
        raise DimensionMismatch(f"context has dimension {interaction.x.shape[0]}, stats expect {stats.dim}")
    z = augment(interaction.x, interaction.p)
    stats.count += 1
    w = 1.0 / stats.count
    stats.gram = outer_accumulate((1.0 - w) * stats.gram, z, w)
    stats.moment = (1.0 - w) * stats.moment + w * interaction.demand * z
    return stats


@dataclass
class History:
    """Columnar log of consecutive interactions starting at step ``start`` (1-based)."""

    contexts: Matrix
    prices: Vector
    demands: Vector
    start: int = 1

    def __post_init__(self) -> None:
        n = self.contexts.shape[0]
        if self.prices.shape[0] != n or self.demands.shape[0] != n:
            raise DimensionMismatch("contexts, prices and demands must have the same length")

    def __len__(self) -> int:
        return int(self.contexts.shape[0])

    @property
    def steps(self) -> np.ndarray:
        return np.arange(self.start, self.start + len(self))

    @classmethod
    def from_interactions(cls, interactions: Sequence[Interaction]) -> "History":
        if not interactions:
            raise ValueError("cannot build a history from no interactions")
        steps = np.array([it.t for it in interactions])
        if np.any(np.diff(steps) != 1):
            raise ValueError("interaction steps must be consecutive and increasing")
        return cls(
            contexts=np.vstack([it.x for it in interactions]),
            prices=np.array([it.p for it in interactions], dtype=np.float64),
            demands=np.array([it.demand for it in interactions], dtype=np.float64),
            start=int(steps[0]),
        )

    def segment(self, start: int, end: int) -> "History":
        """Interactions with steps in [start, end)."""
        lo = max(start - self.start, 0)
        hi = max(min(end - self.start, len(self)), lo)
        return History(
            contexts=self.contexts[lo:hi],
            prices=self.prices[lo:hi],
            demands=self.demands[lo:hi],
            start=self.start + lo,
        )

    def within(self, bounds: PriceBounds) -> bool:
        return bounds.contains(self.prices)

    def design_stats(self) -> DesignStats:
        return DesignStats.from_arrays(self.contexts, self.prices, self.demands)


def ols_fit(stats: DesignStats, *, allow_jitter: bool = False) -> ModelParams:
    """Least-squares estimate of theta from design statistics.

    A solve that needed diagonal jitter means the design is singular; it is
    reported as :class:`SingularSystem` unless ``allow_jitter`` is set.
    """
    if stats.count == 0:
        raise SingularSystem("no interactions to fit")
    solution = solve_spd(stats.gram, stats.moment)
    if solution.jittered and not allow_jitter:
        raise SingularSystem(
            f"design Gram over {stats.count} interactions is singular", jitter=solution.jitter
        )
    return ModelParams.from_vector(solution.x)


def fit_or_keep(
    stats: DesignStats,
    previous: ModelParams | None,
    diagnostics: Diagnostics,
) -> ModelParams | None:
    """Refit, keeping ``previous`` when the design is singular."""
    try:
        return ols_fit(stats)
    except SingularSystem as e:
        diagnostics.singular_fits += 1
        logger.debug("keeping previous estimate after singular fit: %s", e)
        return previous


def plug_in_prices(
    theta_hat: ModelParams | None,
    X: Matrix,
    bounds: PriceBounds,
    diagnostics: Diagnostics | None = None,
) -> Vector:
    """Unclipped plug-in optimal prices, with the midpoint where the slope is degenerate."""
    n = X.shape[0]
    if theta_hat is None:
        logger.debug("no estimate yet, pricing %d context(s) at the midpoint", n)
        if diagnostics is not None:
            diagnostics.fallback_prices += n
        return np.full(n, bounds.midpoint)
    prices, degenerate = optimal_prices(theta_hat, X)
    n_degenerate = int(np.count_nonzero(degenerate))
    if n_degenerate:
        logger.debug("degenerate estimated slope on %d context(s), using the midpoint", n_degenerate)
        prices[degenerate] = bounds.midpoint
        if diagnostics is not None:
            diagnostics.fallback_prices += n_degenerate
    return prices


def clip_prices(prices: Vector, bounds: PriceBounds, diagnostics: Diagnostics | None = None) -> Vector:
    clipped = np.clip(prices, bounds.lower, bounds.upper)
    if diagnostics is not None:
        diagnostics.clip_activations += int(np.count_nonzero(clipped != prices))
    return clipped


def prices_from_estimate(
    theta_hat: ModelParams | None,
    X: Matrix,
    bounds: PriceBounds,
    diagnostics: Diagnostics | None = None,
) -> Vector:
    """Greedy prices clip(p_hat(x)) for every row of ``X``."""
    return clip_prices(plug_in_prices(theta_hat, X, bounds, diagnostics), bounds, diagnostics)


def price_from_estimate(
    theta_hat: ModelParams | None,
    x: ArrayLike,
    bounds: PriceBounds,
    diagnostics: Diagnostics | None = None,
) -> float:
    ctx = as_vector(x, name="x")
    return float(prices_from_estimate(theta_hat, ctx[None, :], bounds, diagnostics)[0])


@dataclass(frozen=True)
class GramDiagnostics:
    eigenvalues: Vector
    trace_inverse: float
    min_eig: float


def gram_diagnostics(stats: DesignStats) -> GramDiagnostics:
    """Spectrum of the design Gram and the trace of its inverse (inf when rank deficient)."""
    eig = symmetric_eigen(stats.gram)
    values = np.maximum(eig.eigenvalues, 0.0)
    return GramDiagnostics(
        eigenvalues=values,
        trace_inverse=trace_inverse(eig, 0.0, rank_tol=RANK_TOL),
        min_eig=float(values[-1]),
    )


def design_min_eig(X: Matrix, prices: Vector) -> float:
    """Smallest eigenvalue of the realized design Gram of a whole trajectory."""
    if X.shape[0] == 0:
        return float("nan")
    return gram_diagnostics(DesignStats.from_arrays(X, prices, np.zeros(X.shape[0]))).min_eig
