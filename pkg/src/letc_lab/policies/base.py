"""Base policy class and the regret trace every run produces."""

from abc import ABC, abstractmethod
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from ..demand import DemandEnvironment, ModelParams, PriceBounds, mean_demands
from ..estimator import Diagnostics, design_min_eig
from ..linalg import Matrix, Vector
from ..schema import Plan


@dataclass
class RegretTrace:
    """Per-step expected regret of one run, with stage and segment markers.

    ``boundaries`` holds the last step (1-based) of each non-final stage;
    ``segments`` holds the last step of each restart segment of a doubling run.
    """

    policy: str
    per_step: Vector
    prices: Vector
    boundaries: list[int] = field(default_factory=list)
    segments: list[int] = field(default_factory=list)
    diagnostics: Diagnostics = field(default_factory=Diagnostics)
    plan: Plan | None = None
    estimates: dict[str, ModelParams | None] = field(default_factory=dict)
    revenue: Vector | None = None

    @property
    def horizon(self) -> int:
        return int(self.per_step.shape[0])

    @property
    def cumulative(self) -> Vector:
        return np.cumsum(self.per_step)

    @property
    def total(self) -> float:
        return float(self.per_step.sum()) if self.horizon else 0.0

    def stage_slices(self) -> list[slice]:
        """Index ranges of the stages, in order."""
        edges = [0, *self.boundaries, self.horizon]
        return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]

    @classmethod
    def concatenate(cls, traces: Sequence["RegretTrace"], policy: str) -> "RegretTrace":
        """Join consecutive restart segments into one trace."""
        if not traces:
            raise ValueError("no traces to concatenate")
        boundaries: list[int] = []
        segments: list[int] = []
        diagnostics = Diagnostics()
        offset = 0
        for trace in traces:
            boundaries.extend(offset + b for b in trace.boundaries)
            offset += trace.horizon
            segments.append(offset)
            d = trace.diagnostics
            diagnostics.singular_fits += d.singular_fits
            diagnostics.fallback_prices += d.fallback_prices
            diagnostics.clip_activations += d.clip_activations
            diagnostics.poisson_clamps += d.poisson_clamps
        diagnostics.design_min_eig = traces[-1].diagnostics.design_min_eig
        return cls(
            policy=policy,
            per_step=np.concatenate([t.per_step for t in traces]),
            prices=np.concatenate([t.prices for t in traces]),
            revenue=None if any(t.revenue is None for t in traces) else np.concatenate([t.revenue for t in traces]),
            boundaries=boundaries,
            segments=segments,
            diagnostics=diagnostics,
            plan=traces[-1].plan,
            estimates=dict(traces[-1].estimates),
        )


def split_streams(rng: np.random.Generator) -> tuple[np.random.Generator, ...]:
    """Independent (context, noise, policy) streams.

    Contexts come from their own stream, so every policy run from the same
    seed faces the same customers.
    """
    return tuple(rng.spawn(3))


def burn_in_prices(n: int, bounds: PriceBounds, rng: np.random.Generator, alternate: bool = False) -> Vector:
    """Prices at the two ends of the feasible range, i.i.d. fair coin or alternating."""
    if alternate:
        return np.where(np.arange(n) % 2 == 0, bounds.lower, bounds.upper).astype(np.float64)
    return np.where(rng.random(n) < 0.5, bounds.lower, bounds.upper)


def rademacher(n: int, rng: np.random.Generator) -> Vector:
    return rng.integers(0, 2, size=n).astype(np.float64) * 2.0 - 1.0


class BasePolicy(ABC):
    """Abstract base class for pricing policies."""

    name: str = "policy"

    @abstractmethod
    def run(self, env: DemandEnvironment, T: int, rng: np.random.Generator) -> RegretTrace:
        """Play ``T`` rounds against ``env`` and return the regret trace."""
        pass

    def _trace(
        self,
        env: DemandEnvironment,
        X: Matrix,
        prices: Vector,
        diagnostics: Diagnostics,
        clamps_before: int = 0,
        **kwargs,
    ) -> RegretTrace:
        diagnostics.poisson_clamps += env.poisson_clamps - clamps_before
        diagnostics.design_min_eig = design_min_eig(X, prices)
        return RegretTrace(
            policy=self.name,
            per_step=env.regret(X, prices),
            prices=prices,
            diagnostics=diagnostics,
            revenue=prices * mean_demands(env.theta, X, prices),
            **kwargs,
        )


def run(policy: BasePolicy, env: DemandEnvironment, T: int, rng: np.random.Generator) -> RegretTrace:
    """Reset ``env`` and play ``policy`` for ``T`` rounds."""
    if T < 1:
        raise ValueError(f"horizon must be positive, got {T}")
    env.reset()
    return policy.run(env, T, rng)
