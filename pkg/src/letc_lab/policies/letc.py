"""Localized explore-then-commit and its variants.

A LetC run has three stages over pre-drawn contexts:

1. burn-in at the two extreme prices, then a least-squares fit on it;
2. localized exploration at ``clip(p_tilde(x) + eta * xi)`` with Rademacher
   ``xi``, then a refit on the stage-2 data alone;
3. greedy pricing from the stage-2 estimate.
"""

import logging
import math
from collections.abc import Callable

import numpy as np

from ..demand import DemandEnvironment, Interaction
from ..estimator import (
    DesignStats,
    Diagnostics,
    accumulate,
    clip_prices,
    fit_or_keep,
    plug_in_prices,
    prices_from_estimate,
)
from ..linalg import Vector
from ..schema import Plan
from .base import BasePolicy, RegretTrace, burn_in_prices, rademacher, split_streams
from .planning import Planner, as_explore_then_commit, time_varying_eta

logger = logging.getLogger(__name__)


def stage_split(plan: Plan, T: int) -> tuple[int, int, int]:
    """Stage lengths actually played in ``T`` rounds; later stages absorb the shortfall."""
    t1 = min(plan.T1, T)
    t2 = min(plan.T2, T - t1)
    return t1, t2, T - t1 - t2


class LetC(BasePolicy):
    """Three-stage localized explore-then-commit.

    Either a fixed ``plan`` or a ``planner`` (horizon to plan) must be given.
    ``pool`` refits stage 2 on stage-1 data as well; ``alternate`` replaces
    the coin-flip burn-in with strict alternation.
    """

    name = "letc"

    def __init__(
        self,
        plan: Plan | None = None,
        planner: Planner | None = None,
        *,
        alternate: bool = False,
        pool: bool = False,
    ) -> None:
        if plan is None and planner is None:
            raise ValueError("LetC needs a plan or a planner")
        self.plan = plan
        self.planner = planner
        self.alternate = alternate
        self.pool = pool

    def plan_for(self, T: int) -> Plan:
        if self.plan is not None:
            return self.plan
        return self.planner(T)

    def run(self, env: DemandEnvironment, T: int, rng: np.random.Generator) -> RegretTrace:
        plan = self.plan_for(T)
        context_rng, noise_rng, policy_rng = split_streams(rng)
        clamps_before = env.poisson_clamps
        diagnostics = Diagnostics()
        bounds = env.bounds
        t1, t2, t3 = stage_split(plan, T)

        X = env.draw_contexts(T, context_rng)
        prices = np.empty(T)
        demands = np.empty(T)

        first = slice(0, t1)
        prices[first] = burn_in_prices(t1, bounds, policy_rng, self.alternate)
        demands[first] = env.respond(X[first], prices[first], noise_rng)
        burn_in = DesignStats.from_arrays(X[first], prices[first], demands[first])
        theta_tilde = fit_or_keep(burn_in, None, diagnostics)

        theta_hat = theta_tilde
        if t2:
            second = slice(t1, t1 + t2)
            centers = plug_in_prices(theta_tilde, X[second], bounds, diagnostics)
            perturbed = centers + plan.eta * rademacher(t2, policy_rng)
            prices[second] = clip_prices(perturbed, bounds, diagnostics)
            demands[second] = env.respond(X[second], prices[second], noise_rng)
            local = DesignStats.from_arrays(X[second], prices[second], demands[second])
            if self.pool:
                local = burn_in.merged(local)
            theta_hat = fit_or_keep(local, theta_tilde, diagnostics)

        if t3:
            third = slice(t1 + t2, T)
            prices[third] = prices_from_estimate(theta_hat, X[third], bounds, diagnostics)
            demands[third] = env.respond(X[third], prices[third], noise_rng)

        return self._trace(
            env,
            X,
            prices,
            diagnostics,
            clamps_before,
            boundaries=[t1, t1 + t2],
            plan=plan,
            estimates={"burn_in": theta_tilde, "commit": theta_hat},
        )


class ExploreThenCommit(LetC):
    """LetC without stage 2: commit on the burn-in estimate."""

    name = "etc"

    def plan_for(self, T: int) -> Plan:
        return as_explore_then_commit(super().plan_for(T))


class TimeVaryingEta(BasePolicy):
    """Burn-in for 4d steps, then refit every step and perturb by a shrinking eta_t.

    There is no commit stage; eta_t = min(sqrt(d / t) ln T, eta_max).
    """

    name = "timevarying"

    def __init__(self, eta_max: float | None = None, *, alternate: bool = False) -> None:
        self.eta_max = eta_max
        self.alternate = alternate

    def eta_schedule(self, T: int, d: int, eta_max: float = math.inf) -> Vector:
        """eta_t for every step after the burn-in."""
        start = min(4 * d, T) + 1
        return np.array([time_varying_eta(t, T, d, eta_max) for t in range(start, T + 1)])

    def run(self, env: DemandEnvironment, T: int, rng: np.random.Generator) -> RegretTrace:
        context_rng, noise_rng, policy_rng = split_streams(rng)
        clamps_before = env.poisson_clamps
        diagnostics = Diagnostics()
        bounds = env.bounds
        d = env.dim
        cap = self.eta_max if self.eta_max is not None else bounds.default_eta_max
        n0 = min(4 * d, T)

        X = env.draw_contexts(T, context_rng)
        prices = np.empty(T)
        demands = np.empty(T)
        prices[:n0] = burn_in_prices(n0, bounds, policy_rng, self.alternate)
        demands[:n0] = env.respond(X[:n0], prices[:n0], noise_rng)
        stats = DesignStats.from_arrays(X[:n0], prices[:n0], demands[:n0])
        theta = fit_or_keep(stats, None, diagnostics)

        etas = self.eta_schedule(T, d, cap)
        signs = rademacher(T - n0, policy_rng)
        for i in range(n0, T):
            x = X[i : i + 1]
            center = plug_in_prices(theta, x, bounds, diagnostics)
            p = clip_prices(center + etas[i - n0] * signs[i - n0], bounds, diagnostics)
            prices[i] = p[0]
            demands[i] = env.respond(x, p, noise_rng)[0]
            accumulate(stats, Interaction(x=X[i], p=float(prices[i]), demand=float(demands[i]), t=i + 1))
            theta = fit_or_keep(stats, theta, diagnostics)

        return self._trace(
            env,
            X,
            prices,
            diagnostics,
            clamps_before,
            boundaries=[n0],
            estimates={"final": theta},
        )


def time_varying_eta_run(
    env: DemandEnvironment,
    T: int,
    d: int,
    rng: np.random.Generator,
    eta_max: float | None = None,
) -> RegretTrace:
    if d != env.dim:
        raise ValueError(f"dimension {d} does not match the environment's {env.dim}")
    if T < 8 * d:
        raise ValueError(f"time-varying runs need T >= 8d, got T={T}, d={d}")
    env.reset()
    return TimeVaryingEta(eta_max).run(env, T, rng)


def doubling_schedule(total_T: int, T0: int) -> list[int]:
    """Segment lengths T0, 2 T0, 4 T0, ... with the last one truncated to fit."""
    if T0 < 4:
        raise ValueError(f"T0 must be at least 4, got {T0}")
    if total_T < 1:
        raise ValueError(f"total horizon must be positive, got {total_T}")
    lengths: list[int] = []
    remaining, length = total_T, T0
    while remaining > 0:
        lengths.append(min(length, remaining))
        remaining -= lengths[-1]
        length *= 2
    return lengths


def doubling_run(
    policy_template: Callable[[Plan], BasePolicy] | Planner,
    env: DemandEnvironment,
    total_T: int,
    T0: int,
    rng: np.random.Generator,
    *,
    planner: Planner | None = None,
) -> RegretTrace:
    """Anytime LetC: restart on segments T0, 2 T0, ... with a fresh plan each time.

    ``policy_template`` is either a planner (each segment then runs
    :class:`LetC` on its plan) or, together with ``planner``, a factory
    turning a plan into a policy. Each segment is planned for its nominal
    length even when the final one is truncated. Nothing carries over
    between segments except the environment's clock.
    """
    lengths = doubling_schedule(total_T, T0)
    if planner is None:
        planner, factory = policy_template, LetC
    else:
        factory = policy_template
    env.reset()
    streams = rng.spawn(len(lengths))
    traces = []
    nominal = T0
    for length, stream in zip(lengths, streams):
        policy = factory(planner(nominal))
        traces.append(policy.run(env, length, stream))
        logger.debug("doubling segment of %d steps (nominal %d) done", length, nominal)
        nominal *= 2
    return RegretTrace.concatenate(traces, policy=f"{traces[0].policy}-doubling")
