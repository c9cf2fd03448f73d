"""Stage lengths and perturbation radius for LetC.

All logarithms are natural. Every planner returns a :class:`Plan` even when
the horizon is too short for the stages it asks for; such plans carry
``horizon_too_short`` and the run degrades by truncating the later stages.
"""

import logging
import math
from collections.abc import Callable

from ..errors import NoBracket
from ..schema import Plan, PlanMode, PlannerSpec, Regime
from ..spectrum import SpectrumSummary, degenerate_dimension, solve_critical_eta

logger = logging.getLogger(__name__)

Planner = Callable[[int], Plan]


def _check_horizon(T: int, d: int) -> None:
    if T < 3:
        raise ValueError(f"horizon must be at least 3, got {T}")
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")


def regret_regime(T: int, d: int) -> Regime:
    """Which regret behavior a horizon falls into for dimension ``d``."""
    _check_horizon(T, d)
    log_sq = math.log(T) ** 2
    if T < d * log_sq:
        return Regime.LINEAR
    if T >= d**4 * log_sq:
        return Regime.DIMENSION_FREE
    return Regime.INTERMEDIATE


def horizon_too_short(T: int, d: int, T1: int, T2: int) -> bool:
    """Stages overrun the horizon, or a stage has fewer than 2d steps."""
    return T1 + T2 > T or T1 < 2 * d or T2 < 2 * d


def stage_lengths(T: int, d: int, d_tilde: float) -> tuple[int, int]:
    """T1 = ceil(sqrt(d_tilde T) ln T) and T2 = ceil(d_tilde T / 2d)."""
    _check_horizon(T, d)
    if d_tilde <= 0.0:
        raise ValueError(f"d_tilde must be positive, got {d_tilde}")
    T1 = math.ceil(math.sqrt(d_tilde * T) * math.log(T))
    T2 = math.ceil(d_tilde / (2 * d) * T)
    return T1, T2


def _finish(plan: Plan) -> Plan:
    if plan.horizon_too_short:
        logger.debug(
            "%s plan for T=%d has T1=%d, T2=%d; later stages will be truncated",
            plan.mode.value,
            plan.horizon,
            plan.T1,
            plan.T2,
        )
    return plan


def plan_simple(T: int, d: int, C0: float = 1.0, eta_max: float = math.inf) -> Plan:
    _check_horizon(T, d)
    log_T = math.log(T)
    T1 = math.ceil(math.sqrt(T) * log_T)
    T2 = math.ceil(T / (2 * d))
    raw_eta = C0 * math.sqrt(d / math.sqrt(T) * log_T)
    constants = {"C0": C0}
    if math.isfinite(eta_max):
        constants["eta_max"] = eta_max
    return _finish(
        Plan(
            T1=T1,
            T2=T2,
            eta=min(raw_eta, eta_max),
            mode=PlanMode.SIMPLE,
            horizon=T,
            constants=constants,
            regime=regret_regime(T, d),
            horizon_too_short=horizon_too_short(T, d, T1, T2),
            eta_capped=raw_eta > eta_max,
        )
    )


def plan_general(
    T: int,
    d: int,
    summary: SpectrumSummary,
    kappa: float = 1.0,
    eta_max: float = math.inf,
    *,
    C0: float = 1.0,
    zeta: float = 2.0,
) -> Plan:
    """Plan from the critical radius of the instance's spectrum.

    Falls back to :func:`plan_simple` (with ``fallback`` set) when the
    critical inequality has no solution in the search bracket.
    """
    _check_horizon(T, d)
    try:
        solution = solve_critical_eta(summary, T, d, kappa, eta_max, zeta=zeta)
    except NoBracket as e:
        logger.warning("falling back to the simple plan: %s", e)
        return plan_simple(T, d, C0, eta_max).model_copy(update={"fallback": True})

    d_tilde = degenerate_dimension(summary, solution.eta)
    T1, T2 = stage_lengths(T, d, d_tilde)
    constants = {"kappa": kappa, "zeta": zeta}
    if math.isfinite(eta_max):
        constants["eta_max"] = eta_max
    return _finish(
        Plan(
            T1=T1,
            T2=T2,
            eta=solution.eta,
            mode=PlanMode.GENERAL,
            horizon=T,
            constants=constants,
            d_tilde=d_tilde,
            eta_star=solution.eta_star,
            regime=regret_regime(T, d),
            horizon_too_short=horizon_too_short(T, d, T1, T2),
            eta_capped=solution.capped,
        )
    )


def plan_experiment(T: int, d: int, C1: float = 10.0, C2: float = 0.005, C3: float = 0.5) -> Plan:
    """The tuned constants used for the synthetic and real-data experiments."""
    _check_horizon(T, d)
    if min(C1, C2, C3) <= 0.0:
        raise ValueError("experiment constants must be positive")
    log_T = math.log(T)
    T1 = math.ceil(math.sqrt(T) * log_T / C1)
    T2 = math.ceil(T / (d * C3))
    eta = math.sqrt(C2 * d * log_T / math.sqrt(T))
    return _finish(
        Plan(
            T1=T1,
            T2=T2,
            eta=eta,
            mode=PlanMode.EXPERIMENT,
            horizon=T,
            constants={"C1": C1, "C2": C2, "C3": C3},
            regime=regret_regime(T, d),
            horizon_too_short=horizon_too_short(T, d, T1, T2),
        )
    )


def time_varying_eta(t: int, T: int, d: int, eta_max: float = math.inf) -> float:
    """eta_t = min(sqrt(d / t) ln T, eta_max)."""
    if t < 1:
        raise ValueError(f"step must be positive, got {t}")
    return min(math.sqrt(d / t) * math.log(T), eta_max)


def plan_time_varying(T: int, d: int, eta_max: float = math.inf) -> Plan:
    """A 4d-step burn-in followed by shrinking perturbations until the end."""
    _check_horizon(T, d)
    T1 = 4 * d
    T2 = max(T - T1, 1)
    return _finish(
        Plan(
            T1=T1,
            T2=T2,
            eta=time_varying_eta(T1 + 1, T, d, eta_max),
            mode=PlanMode.TIME_VARYING,
            horizon=T,
            constants={"eta_max": eta_max} if math.isfinite(eta_max) else {},
            regime=regret_regime(T, d),
            horizon_too_short=T < 8 * d,
        )
    )


def as_explore_then_commit(plan: Plan) -> Plan:
    """Same burn-in, no localized exploration."""
    return plan.model_copy(update={"T2": 0, "eta": 0.0, "mode": PlanMode.ETC})


def make_planner(
    mode: PlanMode,
    d: int,
    spec: PlannerSpec | None = None,
    summary: SpectrumSummary | None = None,
    eta_max: float = math.inf,
) -> Planner:
    """Bind a planning mode and its constants into a function of the horizon.

    ``spec.eta_max`` overrides ``eta_max`` when set.
    """
    spec = spec or PlannerSpec(mode=mode)
    cap = spec.eta_max if spec.eta_max is not None else eta_max

    if mode is PlanMode.SIMPLE:
        return lambda T: plan_simple(T, d, spec.C0, cap)
    if mode is PlanMode.GENERAL:
        if summary is None:
            raise ValueError("the general planner needs a spectrum summary")
        return lambda T: plan_general(T, d, summary, spec.kappa, cap, C0=spec.C0, zeta=spec.zeta)
    if mode is PlanMode.EXPERIMENT:
        return lambda T: plan_experiment(T, d, spec.C1, spec.C2, spec.C3)
    if mode is PlanMode.TIME_VARYING:
        return lambda T: plan_time_varying(T, d, cap)
    if mode is PlanMode.ETC:
        return lambda T: as_explore_then_commit(plan_experiment(T, d, spec.C1, spec.C2, spec.C3))
    raise ValueError(f"unknown plan mode: {mode}")


# Regret bound shapes, up to constants


def regret_bound_simple(T: int, d: int, eta: float) -> float:
    """sqrt(T) ln T + eta^2 T / d."""
    _check_horizon(T, d)
    return math.sqrt(T) * math.log(T) + eta**2 * T / d


def regret_bound_general(T: int, d: int, d_tilde: float, eta: float) -> float:
    """sqrt(d_tilde T) ln T + (d_tilde / 2d) eta^2 T."""
    _check_horizon(T, d)
    return math.sqrt(d_tilde * T) * math.log(T) + d_tilde / (2 * d) * eta**2 * T


def regret_bound_regular(T: int, d_tilde: float, d_tilde_eta: float) -> float:
    """Tighter shape for a zeta-regular radius: (sqrt(d_tilde) + d_tilde / sqrt(d_tilde(eta))) sqrt(T) ln T."""
    if T < 3:
        raise ValueError(f"horizon must be at least 3, got {T}")
    if d_tilde_eta <= 0.0:
        raise ValueError(f"d_tilde(eta) must be positive, got {d_tilde_eta}")
    return (math.sqrt(d_tilde) + d_tilde / math.sqrt(d_tilde_eta)) * math.sqrt(T) * math.log(T)


def regret_envelope(T: int, d: int, d_tilde: float) -> float:
    """Regret shape across the three regimes."""
    regime = regret_regime(T, d)
    if regime is Regime.LINEAR:
        return float(T)
    if regime is Regime.INTERMEDIATE:
        return math.sqrt(d_tilde * T) * math.log(T)
    return math.sqrt(T) * math.log(T)
