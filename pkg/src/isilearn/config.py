"""Experiment configuration: a versioned, strictly validated key-value schema.

Every physical and training parameter of the studies has a named key; the
defaults are the values used throughout the reported experiments.  Unknown
keys are rejected so that typos cannot silently change an experiment.
"""
from __future__ import annotations

import math
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .blocks import FiberParams, ModulatorParams, NoiseParams
from .errors import ConfigurationError
from .link import LinkConfig
from .signals import SignalSpec
from .trainer import PAPER_LR_GRID, TrainConfig

SCHEMA_VERSION = 1

Scenario = Literal["b2b", "fiber2km"]
Mode = Literal["PS", "RxF", "PS_and_RxF"]


class ExperimentConfig(BaseModel):
    """Resolved experiment description consumed by the CLI and the service."""

    model_config = ConfigDict(extra="forbid")

    schema_version: int = SCHEMA_VERSION
    scenario: Scenario = "b2b"
    modes: list[Mode] = Field(default=["PS", "RxF", "PS_and_RxF"])
    taps: list[int] = Field(default=[25])
    seeds: list[int] = Field(default=[0, 1, 2, 3, 4])

    # training recipe
    train_symbols: int = 2_500_000
    batch_size: int = 1000
    screen_lr: bool = True
    lr0_grid: list[float] = Field(default=list(PAPER_LR_GRID))
    lr0: float = 5e-3  # used when screen_lr is false
    clip_norm: float = 1.0
    train_snr_db: float = 12.0  # b2b operating point

    # evaluation
    eval_symbols: int = 1_000_000
    screen_symbols: int = 100_000
    pilot_symbols: int = 10_000
    eval_chunk_symbols: int = 100_000
    snr_grid_db: list[float] = Field(default=[8, 9, 10, 11, 12, 13, 14, 15, 16])
    power_grid_dbm: list[float] = Field(default=[-8.0, -7.0, -6.6, -6.0, -5.0, -4.0, -3.0, -2.0])

    # physics
    baud_rate_ghz: float = 100.0
    sps: int = 4
    rolloff: float = 0.01
    dac_cutoff_ghz: float | None = 45.0
    adc_cutoff_ghz: float | None = 45.0
    bessel_order: int = 5
    fiber_length_km: float = 2.0  # only used by the fiber2km scenario
    wavelength_nm: float = 1270.0
    zero_dispersion_nm: float = 1310.0
    dispersion_slope_ps_nm2_km: float = 0.092
    p_in_dbm: float = 0.0  # b2b launch power (the B2B chain is affine in it)
    mod_index: float = 1.0
    modulator_bias: float = 1.0
    rx_noise_sigma: float = 8e-5  # fixed receiver noise for the fiber scenario
    guard_len: int = 256

    # diagnostics
    eye_amp_bins: int = 128
    eye_power_dbm: float = -6.6  # launch power for eye-diagram exports

    @field_validator("modes", "taps", "seeds", "lr0_grid", "snr_grid_db", "power_grid_dbm")
    @classmethod
    def _non_empty(cls, v, info):
        if not v:
            raise ValueError(f"{info.field_name} must not be empty")
        return v

    @model_validator(mode="after")
    def _consistent(self) -> "ExperimentConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}")
        if self.train_symbols % self.batch_size:
            raise ValueError("train_symbols must be a multiple of batch_size")
        if any(t < 3 for t in self.taps):
            raise ValueError("all tap counts must be >= 3")
        if self.guard_len < max(self.taps) // 2 + 64:
            raise ValueError("guard_len too small for the configured filter lengths")
        if self.rx_noise_sigma < 0:
            raise ValueError("rx_noise_sigma must be >= 0")
        return self

    # -- derived objects ------------------------------------------------------

    def signal_spec(self) -> SignalSpec:
        return SignalSpec(baud_rate=self.baud_rate_ghz * 1e9, sps=self.sps)

    def link_config(self, p_in_dbm: float | None = None) -> LinkConfig:
        scenario_power = p_in_dbm if p_in_dbm is not None else self.p_in_dbm
        if self.scenario == "b2b":
            fiber = FiberParams(length_m=0.0)
            noise = NoiseParams(target_snr_db=self.train_snr_db)
        else:
            fiber = FiberParams.from_engineering(
                self.fiber_length_km,
                self.wavelength_nm,
                self.zero_dispersion_nm,
                self.dispersion_slope_ps_nm2_km,
            )
            noise = NoiseParams(sigma=self.rx_noise_sigma)
        return LinkConfig(
            spec=self.signal_spec(),
            modulator=ModulatorParams(
                p_in_w=1e-3 * 10 ** (scenario_power / 10.0),
                mod_index=self.mod_index,
                bias=self.modulator_bias,
            ),
            fiber=fiber,
            noise=noise,
            dac_cutoff_hz=None if self.dac_cutoff_ghz is None else self.dac_cutoff_ghz * 1e9,
            adc_cutoff_hz=None if self.adc_cutoff_ghz is None else self.adc_cutoff_ghz * 1e9,
            bessel_order=self.bessel_order,
            guard_len=self.guard_len,
            rolloff=self.rolloff,
        )

    def train_config(self, mode: str, num_taps: int, seed: int, lr0: float) -> TrainConfig:
        return TrainConfig(
            mode=mode,
            num_taps=num_taps,
            batch_size=self.batch_size,
            total_train_symbols=self.train_symbols,
            lr0=lr0,
            clip_norm=self.clip_norm,
            seed=seed,
            train_snr_db=self.train_snr_db if self.scenario == "b2b" else None,
        )

    def scaled(self, scale: float) -> "ExperimentConfig":
        """Scale the symbol budgets (train/eval/screen) by `scale`, batch-aligned."""
        if scale <= 0:
            raise ValueError("scale must be positive")
        if scale == 1.0:
            return self
        train = max(1, round(self.train_symbols * scale / self.batch_size)) * self.batch_size
        return self.model_copy(
            update={
                "train_symbols": train,
                "eval_symbols": max(1000, math.ceil(self.eval_symbols * scale)),
                "screen_symbols": max(1000, math.ceil(self.screen_symbols * scale)),
            }
        )

    def with_seed_offset(self, offset: int) -> "ExperimentConfig":
        if offset == 0:
            return self
        return self.model_copy(update={"seeds": [s + offset for s in self.seeds]})


def load_config(path: str) -> ExperimentConfig:
    """Load and validate a YAML (or JSON) experiment file."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: expected a mapping at the top level")
    return ExperimentConfig.model_validate(raw)
