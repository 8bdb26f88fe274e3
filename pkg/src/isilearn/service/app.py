"""FastAPI service exposing the simulation, training and evaluation recipes.

The service is a stateless compute wrapper around the core package: requests
carry the full experiment configuration, responses carry result tables ready
to be rendered as CSV by any client.  File I/O stays on the client side.
"""
from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, experiments
from ..errors import (
    CalibrationError,
    ConfigurationError,
    EstimationError,
    NumericalFaultError,
    ScreeningError,
)
from ..evaluator import theory_ser_4pam
from ..signals import design_rrc
from .schemas import (
    CommandRequest,
    CommandResponse,
    DiagnoseRequest,
    EvaluateRequest,
    HealthResponse,
    ReproduceRequest,
    RrcRequest,
    RrcResponse,
    TableModel,
    TheoryResponse,
)

NUMERICAL_ERRORS = (NumericalFaultError, CalibrationError, EstimationError, ScreeningError)


def _table_models(files: dict) -> dict[str, TableModel]:
    return {
        name: TableModel(columns=t.columns, rows=t.rows, float_fmt=t.float_fmt)
        for name, t in files.items()
    }


def create_app() -> FastAPI:
    app = FastAPI(title="isilearn", version=__version__)

    @app.exception_handler(ConfigurationError)
    async def _config_error(request: Request, exc: ConfigurationError):
        return JSONResponse(status_code=400, content={"detail": str(exc), "kind": "config"})

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={"detail": str(exc), "kind": "config"})

    for err_type in NUMERICAL_ERRORS:

        @app.exception_handler(err_type)
        async def _numerical_error(request: Request, exc: Exception):
            return JSONResponse(status_code=500, content={"detail": str(exc), "kind": "numerical"})

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.get("/theory/ser-4pam", response_model=TheoryResponse)
    def theory(snr_db: float) -> TheoryResponse:
        return TheoryResponse(snr_db=snr_db, ser=float(theory_ser_4pam(snr_db)))

    @app.post("/filters/rrc", response_model=RrcResponse)
    def rrc(req: RrcRequest) -> RrcResponse:
        return RrcResponse(taps=design_rrc(req.num_taps, req.sps, req.rolloff).taps.tolist())

    def _resolve(req: CommandRequest):
        return req.config.with_seed_offset(req.seed_offset).scaled(req.scale)

    @app.post("/train", response_model=CommandResponse)
    def train_cmd(req: CommandRequest) -> CommandResponse:
        cfg = _resolve(req)
        files, info = experiments.cmd_train(cfg, jobs=req.jobs)
        return CommandResponse(
            files=_table_models(files), info=info, config=cfg, scale=req.scale, seed_offset=req.seed_offset
        )

    @app.post("/evaluate", response_model=CommandResponse)
    def evaluate_cmd(req: EvaluateRequest) -> CommandResponse:
        cfg = _resolve(req)
        entries = [
            experiments.TapsEntry(
                mode=t.mode,
                num_taps=t.num_taps,
                seed=t.seed,
                pulse_shaper=np.asarray(t.pulse_shaper, dtype=np.float64),
                rx_filter=np.asarray(t.rx_filter, dtype=np.float64),
            )
            for t in req.taps
        ]
        for entry in entries:
            if len(entry.pulse_shaper) != entry.num_taps or len(entry.rx_filter) != entry.num_taps:
                raise ConfigurationError(
                    f"taps payload for {entry.mode}/{entry.num_taps} has inconsistent length"
                )
        files, info = experiments.cmd_evaluate(cfg, entries, jobs=req.jobs)
        return CommandResponse(
            files=_table_models(files), info=info, config=cfg, scale=req.scale, seed_offset=req.seed_offset
        )

    @app.post("/reproduce", response_model=CommandResponse)
    def reproduce_cmd(req: ReproduceRequest) -> CommandResponse:
        base = None if req.use_default_config else req.config
        cfg = experiments.figure_config(req.figure, base)
        cfg = cfg.with_seed_offset(req.seed_offset)
        files, info = experiments.cmd_reproduce(req.figure, cfg, scale=req.scale, jobs=req.jobs)
        return CommandResponse(
            files=_table_models(files),
            info=info,
            config=cfg.scaled(req.scale),
            scale=req.scale,
            seed_offset=req.seed_offset,
        )

    @app.post("/diagnose", response_model=CommandResponse)
    def diagnose_cmd(req: DiagnoseRequest) -> CommandResponse:
        cfg = _resolve(req)
        entries = [
            experiments.TapsEntry(
                mode=t.mode,
                num_taps=t.num_taps,
                seed=t.seed,
                pulse_shaper=np.asarray(t.pulse_shaper, dtype=np.float64),
                rx_filter=np.asarray(t.rx_filter, dtype=np.float64),
            )
            for t in req.taps
        ]
        files, info = experiments.cmd_diagnose(cfg, entries, jobs=req.jobs)
        return CommandResponse(
            files=_table_models(files), info=info, config=cfg, scale=req.scale, seed_offset=req.seed_offset
        )

    return app


app = create_app()
