"""Pydantic request/response models for the HTTP service."""
from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

from ..config import ExperimentConfig


class TableModel(BaseModel):
    """JSON carrier for one CSV-shaped result table."""

    columns: list[str]
    rows: list[list]
    float_fmt: str = "%.9g"


class HealthResponse(BaseModel):
    status: str
    version: str


class TheoryResponse(BaseModel):
    snr_db: float
    ser: float


class RrcRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    num_taps: int = 25
    sps: int = 4
    rolloff: float = 0.01


class RrcResponse(BaseModel):
    taps: list[float]


class CommandRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: ExperimentConfig = Field(default_factory=ExperimentConfig)
    scale: float = 1.0
    seed_offset: int = 0
    jobs: int = 1


class TapsPayload(BaseModel):
    model_config = ConfigDict(extra="forbid")
    mode: str
    num_taps: int
    seed: int
    pulse_shaper: list[float]
    rx_filter: list[float]


class EvaluateRequest(CommandRequest):
    taps: list[TapsPayload]


class DiagnoseRequest(CommandRequest):
    taps: list[TapsPayload]


class ReproduceRequest(CommandRequest):
    figure: str
    use_default_config: bool = True  # False: take the request's config as the base


class CommandResponse(BaseModel):
    files: dict[str, TableModel]
    info: dict
    config: ExperimentConfig
    scale: float
    seed_offset: int
