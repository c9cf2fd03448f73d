"""Configuration, plan and report models using Pydantic."""

import hashlib
import json
from datetime import date
from enum import Enum
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class PlanMode(str, Enum):
    SIMPLE = "simple"
    GENERAL = "general"
    EXPERIMENT = "experiment"
    TIME_VARYING = "timevarying"
    ETC = "etc"


class Regime(str, Enum):
    LINEAR = "linear"
    INTERMEDIATE = "intermediate"
    DIMENSION_FREE = "dimension_free"


class Plan(BaseModel):
    """Stage lengths and perturbation radius for one horizon."""

    model_config = ConfigDict(frozen=True)

    T1: int = Field(ge=1)
    T2: int = Field(ge=0)
    eta: float = Field(ge=0.0)
    mode: PlanMode
    horizon: int = Field(ge=1)
    constants: dict[str, float] = Field(default_factory=dict)
    d_tilde: Optional[float] = None
    eta_star: Optional[float] = None
    regime: Optional[Regime] = None
    horizon_too_short: bool = False
    fallback: bool = False
    eta_capped: bool = False

    @model_validator(mode="after")
    def _stage_two_present(self) -> "Plan":
        if self.mode is not PlanMode.ETC and self.T2 < 1:
            raise ValueError(f"{self.mode.value} plans need T2 >= 1")
        return self

    @property
    def commit_length(self) -> int:
        return max(self.horizon - self.T1 - self.T2, 0)


SamplerKind = Literal["uniform", "discrete", "finite"]
ThetaKind = Literal["benchmark", "discrete_example", "constant_price", "custom"]
NoiseKind = Literal["gaussian", "poisson"]
PolicyName = Literal["letc", "etc", "greedy", "oracle", "timevarying"]

POLICY_NAMES: list[str] = ["letc", "etc", "greedy", "oracle", "timevarying"]


class InstanceSpec(BaseModel):
    """Synthetic ground truth: feature law, parameters, price bounds and noise."""

    sampler: SamplerKind = "uniform"
    theta: ThetaKind = "benchmark"
    alpha: Optional[list[float]] = None
    beta: Optional[list[float]] = None
    constant_price: float = 1.0
    points: Optional[list[list[float]]] = None
    probabilities: Optional[list[float]] = None
    lower: float = Field(default=0.0, ge=0.0)
    upper: float = 2.0
    margin: Optional[float] = None
    noise: NoiseKind = "gaussian"
    sigma: float = Field(default=0.01, ge=0.0)

    @model_validator(mode="after")
    def _consistent(self) -> "InstanceSpec":
        if self.upper <= self.lower:
            raise ValueError("upper bound must exceed lower bound")
        if self.theta == "custom" and (self.alpha is None or self.beta is None):
            raise ValueError("custom theta needs both alpha and beta")
        if self.sampler == "finite" and (self.points is None or self.probabilities is None):
            raise ValueError("finite sampler needs points and probabilities")
        return self


class PlannerSpec(BaseModel):
    mode: PlanMode = PlanMode.EXPERIMENT
    C0: float = Field(default=1.0, gt=0.0)
    C1: float = Field(default=10.0, gt=0.0)
    C2: float = Field(default=0.005, gt=0.0)
    C3: float = Field(default=0.5, gt=0.0)
    kappa: float = Field(default=1.0, gt=0.0)
    eta_max: Optional[float] = Field(default=None, gt=0.0)
    zeta: float = Field(default=2.0, gt=1.0)
    spectrum_samples: int = Field(default=100_000, ge=1000)
    alternate_burn_in: bool = False
    pool_stages: bool = False


class DoublingSpec(BaseModel):
    T0: int = Field(default=128, ge=4)
    total_T: int = Field(default=2**15, ge=4)
    slope_segments: int = Field(default=2, ge=1)


DESK_D_GRID: list[int] = [4, 8, 16]
DESK_T_GRID: list[int] = [2**k for k in range(7, 16)]
FULL_D_GRID: list[int] = [4, 8, 16, 32, 64]
FULL_T_GRID: list[int] = [2**k for k in range(7, 18)]

# Settings that change where and how fast a run executes, never its output.
RUN_ONLY_FIELDS: set[str] = {"workers", "out_dir"}


class ExperimentConfig(BaseModel):
    """Replicated regret experiment over a (d, T) grid."""

    instance: InstanceSpec = Field(default_factory=InstanceSpec)
    planner: PlannerSpec = Field(default_factory=PlannerSpec)
    policies: list[PolicyName] = Field(default_factory=lambda: ["letc", "etc", "greedy", "oracle"])
    d_grid: list[int] = Field(default_factory=lambda: list(DESK_D_GRID))
    T_grid: list[int] = Field(default_factory=lambda: list(DESK_T_GRID))
    trials: int = Field(default=20, ge=1)
    base_seed: int = Field(default=0, ge=0, lt=2**64)
    slope_window: int = Field(default=4, ge=2)
    out_dir: str = "results"
    workers: int = Field(default=1, ge=1)
    emit_traces: bool = True
    trace_stride: int = Field(default=1, ge=1)
    doubling: DoublingSpec = Field(default_factory=DoublingSpec)

    @field_validator("d_grid")
    @classmethod
    def _positive_dims(cls, v: list[int]) -> list[int]:
        if not v:
            raise ValueError("d grid must not be empty")
        if any(d < 1 for d in v):
            raise ValueError("dimensions must be positive")
        return v

    @field_validator("T_grid")
    @classmethod
    def _valid_horizons(cls, v: list[int]) -> list[int]:
        if not v:
            raise ValueError("T grid must not be empty")
        if any(T < 3 for T in v):
            raise ValueError("horizons must be at least 3")
        return v

    @field_validator("policies")
    @classmethod
    def _some_policy(cls, v: list[str]) -> list[str]:
        if not v:
            raise ValueError("at least one policy is required")
        return v

    def with_full_grid(self) -> "ExperimentConfig":
        return self.model_copy(update={"d_grid": list(FULL_D_GRID), "T_grid": list(FULL_T_GRID), "trials": 100})

    def provenance(self) -> dict:
        """The config as it determines results; where and how fast it ran are left out."""
        return self.model_dump(mode="json", exclude=RUN_ONLY_FIELDS)

    def canonical_json(self) -> str:
        return json.dumps(self.provenance(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


class SalesRecord(BaseModel):
    """One day of historical sales for one product."""

    product_id: str
    date: date
    price: float = Field(ge=0.0)
    units_sold: float = Field(ge=0.0)
    comp_min: float = Field(ge=0.0)
    comp_max: float = Field(ge=0.0)
    min_allowed: float = Field(ge=0.0)
    max_allowed: float = Field(ge=0.0)


SALES_COLUMNS: list[str] = [
    "product_id",
    "date",
    "price",
    "units_sold",
    "comp_min",
    "comp_max",
    "min_allowed",
    "max_allowed",
]


class EvaluationSettings(BaseModel):
    """Knobs of the semi-synthetic evaluation."""

    C1: float = Field(default=3.0, gt=0.0)
    C2: float = Field(default=0.1, gt=0.0)
    C3: float = Field(default=0.5, gt=0.0)
    krr_alpha: float = Field(default=0.2, gt=0.0)
    krr_gamma: float = Field(default=0.05, gt=0.0)
    max_krr_samples: int = Field(default=2000, ge=1)
    horizon: int = Field(default=365, ge=1)
    trials: int = Field(default=20, ge=1)
    max_tries: int = Field(default=10_000, ge=1)
    n_components: int = Field(default=1, ge=1)
    pool_stages: bool = True
    doubling: bool = False
    doubling_T0: int = Field(default=28, ge=4)
    base_seed: int = Field(default=0, ge=0, lt=2**64)


class WeekdayFeatureParams(BaseModel):
    weekday: int = Field(ge=0, le=6)
    weights: list[float]
    means: list[list[float]]
    covariances: list[list[list[float]]]


class RevenueRow(BaseModel):
    policy: str
    mean_revenue: float
    std_revenue: float
    trials: int
    improvement_pct: Optional[float] = None
    mean_regret: Optional[float] = None


class CalibrationReport(BaseModel):
    """Per-product output of the calibration pipeline."""

    product_id: str
    n_records: int
    status: Literal["ok", "discarded"] = "ok"
    discard_reason: Optional[str] = None
    discard_details: Optional[dict[str, Any]] = None
    alpha: list[float] = Field(default_factory=list)
    beta: list[float] = Field(default_factory=list)
    lower: Optional[float] = None
    upper: Optional[float] = None
    feature_model: list[WeekdayFeatureParams] = Field(default_factory=list)
    revenue: list[RevenueRow] = Field(default_factory=list)
