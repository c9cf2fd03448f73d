"""Spectral analysis of the optimal-price second-moment matrix.

``sigma_star = E[z z']`` with ``z = (x, x * p*(x))`` is what the design
converges to once prices track the optimum. It is always singular: the
direction ``(alpha, 2 beta)`` is orthogonal to every such ``z``. How much of
its spectrum sits below ``eta^2`` (the degenerate dimension) decides how
much localized exploration a horizon can afford, through the critical
inequality

    S(eta) = sqrt(d_tilde(eta) / 2d)  >=  kappa * sqrt(2d / T) * ln T / eta^2.
"""

import logging
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike
from scipy.optimize import bisect

from .demand import FeatureSampler, FiniteSupport, ModelParams, PriceBounds, optimal_prices
from .errors import DegenerateSlope, DimensionMismatch, NoBracket
from .estimator import augment_batch
from .linalg import Matrix, Vector, as_matrix, clamp_eigenvalues, symmetric_eigen

logger = logging.getLogger(__name__)

BRACKET_LOWER: float = 1e-8
SOLVER_XTOL: float = 1e-14
RESIDUAL_TOL: float = 1e-9
DEFAULT_CHUNK: int = 100_000
DEFAULT_ZETA: float = 2.0
DEFAULT_ETA_POINTS: int = 9


@dataclass(frozen=True)
class SpectrumSummary:
    """Eigenvalues of a 2d x 2d second-moment matrix, sorted non-increasing and clamped at 0."""

    eigenvalues: Vector
    n_samples: int = 0
    null_candidate: Vector | None = None

    def __post_init__(self) -> None:
        values = np.sort(clamp_eigenvalues(np.asarray(self.eigenvalues, dtype=np.float64)))[::-1]
        if values.shape[0] == 0 or values.shape[0] % 2:
            raise DimensionMismatch(f"spectrum length must be even and positive, got {values.shape[0]}")
        object.__setattr__(self, "eigenvalues", values.copy())

    @classmethod
    def from_eigenvalues(cls, values: ArrayLike) -> "SpectrumSummary":
        return cls(eigenvalues=np.asarray(values, dtype=np.float64))

    @property
    def dim(self) -> int:
        """Context dimension d."""
        return self.eigenvalues.shape[0] // 2

    @property
    def top(self) -> float:
        return float(self.eigenvalues[0])

    def as_dict(self) -> dict:
        return {
            "eigenvalues": self.eigenvalues.tolist(),
            "n_samples": self.n_samples,
            "null_candidate": None if self.null_candidate is None else self.null_candidate.tolist(),
        }


def estimate_sigma_star(
    theta_true: ModelParams,
    sampler: FeatureSampler,
    bounds: PriceBounds,
    n_samples: int,
    rng: np.random.Generator,
    *,
    chunk_size: int = DEFAULT_CHUNK,
) -> Matrix:
    """Monte Carlo estimate of E[z z'] along optimal prices.

    Samples are processed in chunks and reduced in a fixed order, so the
    result depends only on ``rng``.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be positive, got {n_samples}")
    if n_samples < 1000:
        logger.warning("estimating sigma_star from only %d samples", n_samples)
    two_d = 2 * theta_true.dim
    total = np.zeros((two_d, two_d))
    outside = 0
    done = 0
    while done < n_samples:
        n = min(chunk_size, n_samples - done)
        X = sampler.sample(n, rng, start=done)
        prices, degenerate = optimal_prices(theta_true, X)
        if np.any(degenerate):
            raise DegenerateSlope(
                f"{int(degenerate.sum())} of {n} sampled contexts have a degenerate true slope"
            )
        outside += int(np.count_nonzero((prices < bounds.lower) | (prices > bounds.upper)))
        Z = augment_batch(X, prices)
        total += Z.T @ Z
        done += n
    if outside:
        logger.warning("%d of %d optimal prices fall outside [%g, %g]", outside, n_samples, bounds.lower, bounds.upper)
    sigma = total / n_samples
    return 0.5 * (sigma + sigma.T)


def summarize(sigma: ArrayLike, theta: ModelParams | None = None, n_samples: int = 0) -> SpectrumSummary:
    eig = symmetric_eigen(sigma)
    null = None
    if theta is not None:
        v = theta.null_vector()
        null = v / np.linalg.norm(v)
    return SpectrumSummary(eigenvalues=eig.eigenvalues, n_samples=n_samples, null_candidate=null)


@dataclass(frozen=True)
class NullSpaceCheck:
    residual: float
    second_smallest: float


def verify_null_space(sigma_star: ArrayLike, theta_true: ModelParams) -> NullSpaceCheck:
    """Quadratic form of sigma_star along the normalized (alpha, 2 beta) and its second-smallest eigenvalue."""
    S = as_matrix(sigma_star)
    if S.shape[0] != 2 * theta_true.dim:
        raise DimensionMismatch(f"sigma_star is {S.shape[0]}x{S.shape[0]}, theta has dimension {theta_true.dim}")
    v = theta_true.null_vector()
    v = v / np.linalg.norm(v)
    values = clamp_eigenvalues(symmetric_eigen(S).eigenvalues)
    second = float(values[-2]) if values.shape[0] > 1 else float("nan")
    return NullSpaceCheck(residual=float(abs(v @ S @ v)), second_smallest=second)


def degenerate_dimension(summary: SpectrumSummary, eta: float) -> float:
    """d_tilde(eta) = sum_k min(eta^2 / lambda_k, 1), with zero eigenvalues counting 1."""
    if eta < 0.0:
        raise ValueError(f"eta must be non-negative, got {eta}")
    lam = summary.eigenvalues
    positive = lam > 0.0
    ratios = np.ones_like(lam)
    ratios[positive] = np.minimum(eta**2 / lam[positive], 1.0)
    return float(ratios.sum())


def singularity(summary: SpectrumSummary, eta: float) -> float:
    """S(eta) = sqrt(d_tilde(eta) / 2d)."""
    return math.sqrt(degenerate_dimension(summary, eta) / (2 * summary.dim))


def snr(T: float, d: int, kappa: float = 1.0) -> float:
    """(sqrt(T) / ln T) / (kappa * sqrt(2d))."""
    if T < 3:
        raise ValueError(f"horizon must be at least 3, got {T}")
    if kappa <= 0.0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    return (math.sqrt(T) / math.log(T)) / (kappa * math.sqrt(2 * d))


def critical_rhs(eta: float, T: float, d: int, kappa: float = 1.0) -> float:
    return kappa * math.sqrt(2 * d / T) * math.log(T) / eta**2


def critical_gap(summary: SpectrumSummary, eta: float, T: float, d: int, kappa: float = 1.0) -> float:
    """g(eta) = S(eta) - kappa sqrt(2d/T) ln T / eta^2; non-decreasing in eta."""
    return singularity(summary, eta) - critical_rhs(eta, T, d, kappa)


@dataclass(frozen=True)
class CriticalSolution:
    """Crossing of the critical inequality.

    ``eta_star`` is the raw crossing; ``eta`` is what a planner should use,
    capped at ``eta_max``.
    """

    eta_star: float
    eta: float
    capped: bool
    residual: float
    lhs_value: float
    rhs_value: float
    bracket: tuple[float, float]
    horizon: float
    dim: int
    kappa: float
    zeta: float = DEFAULT_ZETA
    regular: bool | None = None
    tolerance: float = field(default=SOLVER_XTOL)

    def as_dict(self) -> dict:
        return {
            "eta_star": self.eta_star,
            "eta": self.eta,
            "capped": self.capped,
            "residual": self.residual,
            "lhs_value": self.lhs_value,
            "rhs_value": self.rhs_value,
            "bracket": list(self.bracket),
            "horizon": self.horizon,
            "dim": self.dim,
            "kappa": self.kappa,
            "zeta": self.zeta,
            "regular": self.regular,
        }


def solve_critical_eta(
    summary: SpectrumSummary,
    T: float,
    d: int,
    kappa: float = 1.0,
    eta_max: float = math.inf,
    *,
    zeta: float = DEFAULT_ZETA,
) -> CriticalSolution:
    """Bisect g(eta) for the critical radius.

    The bracket is [1e-8, max(eta_max, sqrt(lambda_1) + 1)]; past
    sqrt(lambda_1) the left side is saturated at 1, so any crossing lies
    inside whenever g is non-negative at the upper end.

    Raises
    ------
    NoBracket
        If g is still negative at the upper end of the bracket.
    """
    if T < 3:
        raise ValueError(f"horizon must be at least 3, got {T}")
    if summary.dim != d:
        raise DimensionMismatch(f"spectrum has dimension {summary.dim}, expected {d}")
    upper = math.sqrt(summary.top) + 1.0
    if math.isfinite(eta_max):
        upper = max(eta_max, upper)
    lower = BRACKET_LOWER

    def g(eta: float) -> float:
        return critical_gap(summary, eta, T, d, kappa)

    g_upper = g(upper)
    if g_upper < 0.0:
        raise NoBracket(
            f"critical inequality has no solution below {upper:.6g} at T={T:g}, d={d}",
            upper=upper,
            value_at_upper=g_upper,
        )
    if g(lower) >= 0.0:
        eta_star = lower
    elif g_upper == 0.0:
        eta_star = upper
    else:
        eta_star = float(bisect(g, lower, upper, xtol=SOLVER_XTOL, maxiter=500))

    lhs = singularity(summary, eta_star)
    rhs = critical_rhs(eta_star, T, d, kappa)
    residual = abs(lhs - rhs) / max(lhs, rhs, 1.0)
    if residual > RESIDUAL_TOL:
        logger.warning("critical solve residual %.3e exceeds %.1e", residual, RESIDUAL_TOL)
    capped = eta_star > eta_max
    solution = CriticalSolution(
        eta_star=eta_star,
        eta=min(eta_star, eta_max),
        capped=capped,
        residual=residual,
        lhs_value=lhs,
        rhs_value=rhs,
        bracket=(lower, upper),
        horizon=T,
        dim=d,
        kappa=kappa,
        zeta=zeta,
    )
    return replace(solution, regular=check_regular(summary, solution, zeta))


def check_regular(summary: SpectrumSummary, solution: CriticalSolution, zeta: float) -> bool:
    """True when eta_star / zeta no longer satisfies the critical inequality.

    Shrinking by less than the solver tolerance counts as regular.
    """
    if zeta <= 1.0:
        raise ValueError(f"zeta must exceed 1, got {zeta}")
    shrunk = solution.eta_star / zeta
    if solution.eta_star - shrunk <= solution.tolerance:
        return True
    return critical_gap(summary, shrunk, solution.horizon, solution.dim, solution.kappa) < 0.0


def stage_two_error_proxy(summary: SpectrumSummary, eta: float, T: float, T2: int) -> float:
    """sum_k 1 / (lambda_k + eta^2) * ln T / T2: localized exploration acts like a ridge penalty."""
    if T2 < 1:
        raise ValueError(f"T2 must be positive, got {T2}")
    shifted = summary.eigenvalues + eta**2
    if np.any(shifted <= 0.0):
        return math.inf
    return float(np.sum(1.0 / shifted) * math.log(T) / T2)


def default_eta_grid(eta_max: float, points: int = DEFAULT_ETA_POINTS) -> list[float]:
    """Geometric radii from eta_max / 2^(points - 1) up to eta_max."""
    if eta_max <= 0.0 or not math.isfinite(eta_max):
        raise ValueError(f"eta_max must be positive and finite, got {eta_max}")
    return np.geomspace(eta_max / 2 ** (points - 1), eta_max, points).tolist()


def spectrum_table(
    summary: SpectrumSummary,
    etas: Iterable[float],
    T: float,
    kappa: float = 1.0,
) -> list[dict[str, float]]:
    d = summary.dim
    return [
        {
            "eta": float(eta),
            "d_tilde": degenerate_dimension(summary, eta),
            "singularity": singularity(summary, eta),
            "gap": critical_gap(summary, eta, T, d, kappa),
        }
        for eta in etas
    ]


# Assumption checkers


@dataclass(frozen=True)
class CoordinateMoments:
    index: int
    first: float
    second: float
    third: float
    fourth: float
    exempt: bool
    mean_ok: bool
    third_ok: bool
    variance_ok: bool
    kurtosis_ok: bool

    @property
    def passed(self) -> bool:
        return self.mean_ok and self.third_ok and self.variance_ok and self.kurtosis_ok


@dataclass(frozen=True)
class MomentReport:
    c_mo: float
    coordinates: list[CoordinateMoments]
    independent: bool | None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.coordinates) and self.independent is not False


def _independence(sampler: FeatureSampler) -> bool | None:
    if isinstance(sampler, FiniteSupport):
        return sampler.is_product_measure()
    return sampler.independent_coordinates


def moment_condition_check(sampler: FeatureSampler, c_mo: float, tol: float = 1e-12) -> MomentReport:
    """Exact moment conditions for anti-concentration on a finite-support law.

    Each coordinate needs E[x^2] = 1 and E[x^4] > 1 + c_mo; all but the first
    also need E[x] = E[x^3] = 0.
    """
    marginals_fn = getattr(sampler, "marginals", None)
    if marginals_fn is None:
        raise TypeError(f"{type(sampler).__name__} has no finite marginals")
    marginals = marginals_fn()
    coordinates = []
    for i, (values, mass) in enumerate(marginals):
        m = [float(np.sum(mass * values**k)) for k in (1, 2, 3, 4)]
        exempt = i == 0
        coordinates.append(
            CoordinateMoments(
                index=i,
                first=m[0],
                second=m[1],
                third=m[2],
                fourth=m[3],
                exempt=exempt,
                mean_ok=exempt or abs(m[0]) <= tol,
                third_ok=exempt or abs(m[2]) <= tol,
                variance_ok=abs(m[1] - 1.0) <= tol,
                kurtosis_ok=m[3] > 1.0 + c_mo,
            )
        )
    return MomentReport(c_mo=c_mo, coordinates=coordinates, independent=_independence(sampler))


def fourth_moment_of_form(samples: Matrix, A: ArrayLike) -> float:
    """Monte Carlo E[(x' A x)^2] over the rows of ``samples``."""
    M = as_matrix(A)
    q = np.einsum("ij,jk,ik->i", samples, M, samples)
    return float(np.mean(q**2))


def _random_low_rank(d: int, max_rank: int, rng: np.random.Generator) -> Matrix:
    r = int(rng.integers(1, min(max_rank, d) + 1))
    U = rng.standard_normal((d, r))
    signs = rng.choice([-1.0, 1.0], size=r)
    A = (U * signs) @ U.T
    return A / np.linalg.norm(A)


def anti_concentration_probe(
    sampler: FeatureSampler,
    n_matrices: int,
    n_samples: int,
    rng: np.random.Generator,
    *,
    max_rank: int = 4,
    matrices: Sequence[ArrayLike] = (),
) -> float:
    """Smallest E[(x' A x)^2] over random unit-Frobenius symmetric matrices of rank <= 4.

    A randomized lower-bound probe, not a proof. ``matrices`` adds explicit
    test matrices (normalized to unit Frobenius norm).
    """
    X = sampler.sample(n_samples, rng)
    d = sampler.dim
    candidates = [_random_low_rank(d, max_rank, rng) for _ in range(n_matrices)]
    for A in matrices:
        M = as_matrix(A)
        candidates.append(M / np.linalg.norm(M))
    if not candidates:
        raise ValueError("no probe matrices")
    return min(fourth_moment_of_form(X, A) for A in candidates)
