"""Reference policies LetC is compared against."""

from collections.abc import Callable

import numpy as np

from ..demand import DemandEnvironment, Interaction
from ..estimator import DesignStats, Diagnostics, accumulate, fit_or_keep, prices_from_estimate
from ..linalg import Matrix, Vector
from .base import BasePolicy, RegretTrace, burn_in_prices, split_streams


class Greedy(BasePolicy):
    """Alternate the extreme prices for 2d steps, then refit and exploit every step."""

    name = "greedy"

    def run(self, env: DemandEnvironment, T: int, rng: np.random.Generator) -> RegretTrace:
        context_rng, noise_rng, policy_rng = split_streams(rng)
        clamps_before = env.poisson_clamps
        diagnostics = Diagnostics()
        bounds = env.bounds
        n0 = min(2 * env.dim, T)

        X = env.draw_contexts(T, context_rng)
        prices = np.empty(T)
        demands = np.empty(T)
        prices[:n0] = burn_in_prices(n0, bounds, policy_rng, alternate=True)
        demands[:n0] = env.respond(X[:n0], prices[:n0], noise_rng)
        stats = DesignStats.from_arrays(X[:n0], prices[:n0], demands[:n0])
        theta = fit_or_keep(stats, None, diagnostics)

        for i in range(n0, T):
            x = X[i : i + 1]
            p = prices_from_estimate(theta, x, bounds, diagnostics)
            prices[i] = p[0]
            demands[i] = env.respond(x, p, noise_rng)[0]
            accumulate(stats, Interaction(x=X[i], p=float(prices[i]), demand=float(demands[i]), t=i + 1))
            theta = fit_or_keep(stats, theta, diagnostics)

        return self._trace(env, X, prices, diagnostics, clamps_before, boundaries=[n0], estimates={"final": theta})


class Oracle(BasePolicy):
    """Prices at clip(p*(x)) with the true parameters."""

    name = "oracle"

    def run(self, env: DemandEnvironment, T: int, rng: np.random.Generator) -> RegretTrace:
        context_rng, noise_rng, _ = split_streams(rng)
        clamps_before = env.poisson_clamps
        diagnostics = Diagnostics()
        X = env.draw_contexts(T, context_rng)
        prices = prices_from_estimate(env.theta, X, env.bounds, diagnostics)
        env.respond(X, prices, noise_rng)
        return self._trace(env, X, prices, diagnostics, clamps_before, estimates={"final": env.theta})


class StaticOffline(BasePolicy):
    """A fixed pricing function of the context, learned offline and never updated.

    ``price_fn`` maps a block of contexts to prices; results are clipped to
    the feasible range.
    """

    name = "offline"

    def __init__(self, price_fn: Callable[[Matrix], Vector], name: str | None = None) -> None:
        self.price_fn = price_fn
        if name is not None:
            self.name = name

    def run(self, env: DemandEnvironment, T: int, rng: np.random.Generator) -> RegretTrace:
        context_rng, noise_rng, _ = split_streams(rng)
        clamps_before = env.poisson_clamps
        diagnostics = Diagnostics()
        X = env.draw_contexts(T, context_rng)
        raw = np.asarray(self.price_fn(X), dtype=np.float64).reshape(-1)
        if raw.shape[0] != T:
            raise ValueError(f"pricing function returned {raw.shape[0]} prices for {T} contexts")
        prices = np.clip(raw, env.bounds.lower, env.bounds.upper)
        diagnostics.clip_activations += int(np.count_nonzero(prices != raw))
        env.respond(X, prices, noise_rng)
        return self._trace(env, X, prices, diagnostics, clamps_before)
