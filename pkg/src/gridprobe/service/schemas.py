"""Request/response models for the probing service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class NoiseModel(BaseModel):
    meas_rel_accuracy: float = 0.0
    load_sigma_rel: float = 0.0
    gamma: float = 0.0
    power_factor: float = 0.95
    seed: int = 0


class DatasetPayload(BaseModel):
    """Wire form of a probing dataset; matrices travel as nested lists."""

    v_tilde: list[list[float]]
    delta: list[list[float]]
    buses: list[int]
    w: list[list[float]] | None = None
    truth_theta: list[list[float]] | None = None
    truth_status: list[int] | None = None
    meta: dict = Field(default_factory=dict)


class SimulateRequest(BaseModel):
    feeder_text: str
    buses: list[int]
    deltas: list[float]
    design: str = "paired"
    repeats: int = 1
    model: str = "linear"
    noise: NoiseModel = Field(default_factory=NoiseModel)
    weighting: str = "identity"
    standing_generation: bool = False


class SimulateResponse(BaseModel):
    dataset: DatasetPayload


class TreePayload(BaseModel):
    parents: list[int]
    resistances: list[float]          # entry per non-root node, in node order


class IdentifyRequest(BaseModel):
    dataset: DatasetPayload
    prior_mask: list[list[int]] | None = None
    lam: float = 5e-3
    mu: float = 1.0
    rho: float = 1.0
    max_iter: int = 50_000
    tol_scale: float = 1e-7
    adaptive_rho: bool = False


class IdentifyResponse(BaseModel):
    theta: list[list[float]]
    converged: bool
    iterations: int
    primal_residual: float
    dual_residual: float
    tree: TreePayload
    edges: list[tuple[int, int, float]]


class VerifyRequest(BaseModel):
    feeder_text: str
    dataset: DatasetPayload
    method: str = "pgd"               # "pgd" or "exhaustive"
    mu: float = 2e-8
    nu: float = 1e-10
    max_iter: int = 1000
    rounding: str = "top_n"
    configs: list[list[int]] | None = None


class ConfigRow(BaseModel):
    config_id: int
    status: list[int]
    objective: float


class VerifyResponse(BaseModel):
    status: list[int]
    objective: float
    is_tree: bool
    method: str
    iterations: int | None = None
    converged: bool | None = None
    relaxed_status: list[float] | None = None
    table: list[ConfigRow] | None = None
    ties: list[int] | None = None


class CheckIdentifiabilityRequest(BaseModel):
    feeder_text: str
    probed: list[int] | None = None   # default: every candidate leaf bus
    configs: list[list[int]] | None = None


class CheckIdentifiabilityResponse(BaseModel):
    verifiable: bool
    distinct_resistances: bool
    n_configs: int
    probed: list[int]
    confusable_pairs: list[tuple[int, int]]


class BenchRequest(BaseModel):
    feeder_text: str
    task: str = "both"                # "identify", "verify" or "both"
    scenario: dict = Field(default_factory=dict)


class RunRow(BaseModel):
    run: int
    rmse: float
    line_errors: int
    failed: bool
    detail: str = ""
    oracle_match: bool | None = None


class TaskReport(BaseModel):
    task: str
    aggregates: dict
    records: list[RunRow]


class BenchResponse(BaseModel):
    reports: list[TaskReport]


class HealthResponse(BaseModel):
    status: str
    version: str
