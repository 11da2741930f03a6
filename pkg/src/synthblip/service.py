"""HTTP service wrapping the experiment runners.

Request bodies embed the same :class:`ExperimentConfig` schema the config
files use, so a payload is exactly a config plus output locations.  Donor
and horizon deficits map to 409 (the fit is impossible on this panel, not a
malformed request); semantic config problems map to 400; schema violations
are FastAPI's usual 422.
"""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .config import ExperimentConfig
from .estimators import DonorDeficit, HorizonDeficit
from .harness import run_estimate, run_oracle, run_simulate, run_sweep, run_validate


class SimulateRequest(BaseModel):
    config: ExperimentConfig
    out_dir: str
    seed: Optional[int] = Field(default=None, ge=0)


class SimulateResponse(BaseModel):
    paths: dict[str, str]
    n_units: int
    n_periods: int


class EstimateRequest(BaseModel):
    config: ExperimentConfig
    out_dir: Optional[str] = None
    panel_dir: Optional[str] = None


class EstimateResponse(BaseModel):
    aggregates: dict
    deficits: list[dict]
    donor_summary: Optional[dict] = None


class SweepRequest(BaseModel):
    config: ExperimentConfig
    out_dir: Optional[str] = None


class SweepResponse(BaseModel):
    cell_rmse: dict[str, float]
    n_rows: int
    n_deficits: int
    paths: dict[str, str]


class OracleRequest(BaseModel):
    config: ExperimentConfig
    out_dir: str
    max_enum: Optional[int] = Field(default=None, ge=1)


class OracleResponse(BaseModel):
    n_entries: int
    paths: dict[str, str]


class ValidateRequest(BaseModel):
    panel_csv: str
    meta_json: str


class ValidateResponse(BaseModel):
    valid: bool
    violations: list[str]


def create_app() -> FastAPI:
    app = FastAPI(title="synthblip", version=__version__)

    @app.exception_handler(DonorDeficit)
    async def _donor_deficit(request: Request, exc: DonorDeficit) -> JSONResponse:
        return JSONResponse(status_code=409, content={"error": "donor_deficit", "detail": str(exc)})

    @app.exception_handler(HorizonDeficit)
    async def _horizon_deficit(request: Request, exc: HorizonDeficit) -> JSONResponse:
        return JSONResponse(status_code=409, content={"error": "horizon_deficit", "detail": str(exc)})

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"error": "config", "detail": str(exc)})

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(req: SimulateRequest) -> SimulateResponse:
        result = run_simulate(req.config, req.out_dir, seed=req.seed)
        return SimulateResponse(**result.to_dict())

    @app.post("/estimate", response_model=EstimateResponse)
    def estimate(req: EstimateRequest) -> EstimateResponse:
        report = run_estimate(req.config, req.out_dir, panel_dir=req.panel_dir)
        return EstimateResponse(
            aggregates=report.aggregates,
            deficits=[d.to_dict() for d in report.deficits],
            donor_summary=report.donor_summary,
        )

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(req: SweepRequest) -> SweepResponse:
        result = run_sweep(req.config, req.out_dir)
        return SweepResponse(
            cell_rmse=result.cell_rmse,
            n_rows=len(result.rows),
            n_deficits=len(result.deficits),
            paths=result.paths,
        )

    @app.post("/oracle", response_model=OracleResponse)
    def oracle(req: OracleRequest) -> OracleResponse:
        result = run_oracle(req.config, req.out_dir, max_enum=req.max_enum)
        return OracleResponse(**result.to_dict())

    @app.post("/validate", response_model=ValidateResponse)
    def validate(req: ValidateRequest) -> ValidateResponse:
        result = run_validate(req.panel_csv, req.meta_json)
        return ValidateResponse(**result.to_dict())

    return app


app = create_app()
