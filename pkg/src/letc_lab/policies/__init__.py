"""Pricing policies and their planners."""

from .base import BasePolicy, RegretTrace, run
from .baselines import Greedy, Oracle, StaticOffline
from .letc import ExploreThenCommit, LetC, TimeVaryingEta, doubling_run, doubling_schedule, time_varying_eta_run
from .planning import (
    make_planner,
    plan_experiment,
    plan_general,
    plan_simple,
    plan_time_varying,
    regret_bound_general,
    regret_bound_regular,
    regret_bound_simple,
    regret_envelope,
    regret_regime,
)

__all__ = [
    "BasePolicy",
    "RegretTrace",
    "run",
    "Greedy",
    "Oracle",
    "StaticOffline",
    "LetC",
    "ExploreThenCommit",
    "TimeVaryingEta",
    "doubling_run",
    "doubling_schedule",
    "time_varying_eta_run",
    "make_planner",
    "plan_simple",
    "plan_general",
    "plan_experiment",
    "plan_time_varying",
    "regret_bound_simple",
    "regret_bound_general",
    "regret_bound_regular",
    "regret_envelope",
    "regret_regime",
]
