"""FastAPI application exposing the toolkit over HTTP.

Run with ``uvicorn gcnet.service.app:app`` or ``gcnet serve``.  Library
errors map to structured JSON bodies carrying the CLI exit code, so a thin
client can fail with the same code whether it ran locally or remotely.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import ConfigError, DataError, GCNetError
from . import handlers
from . import schemas as S

app = FastAPI(
    title="gcnet service",
    description="Train, evaluate, and simulate gated-compression networks.",
    version=__version__,
)


@app.exception_handler(GCNetError)
async def gcnet_error_handler(request: Request, exc: GCNetError):
    status = 400 if isinstance(exc, (ConfigError, DataError)) else 500
    body = S.ErrorResponse(
        error=S.ErrorInfo(
            type=type(exc).__name__, message=str(exc), exit_code=exc.exit_code
        )
    )
    return JSONResponse(status_code=status, content=body.model_dump())


@app.get("/health", response_model=S.HealthResponse)
def health() -> S.HealthResponse:
    return S.HealthResponse(version=__version__)


@app.post("/train", response_model=S.TrainResponse)
def train(req: S.TrainRequest) -> S.TrainResponse:
    return handlers.handle_train(req)


@app.post("/eval", response_model=S.EvalResponse)
def evaluate(req: S.EvalRequest) -> S.EvalResponse:
    return handlers.handle_eval(req)


@app.post("/roc", response_model=S.RocResponse)
def roc(req: S.RocRequest) -> S.RocResponse:
    return handlers.handle_roc(req)


@app.post("/sweep", response_model=S.SweepResponse)
def sweep(req: S.SweepRequest) -> S.SweepResponse:
    return handlers.handle_sweep(req)


@app.post("/simulate", response_model=S.SimulateResponse)
def simulate(req: S.SimulateRequest) -> S.SimulateResponse:
    return handlers.handle_simulate(req)


@app.post("/export-deploy", response_model=S.ExportDeployResponse)
def export_deploy(req: S.ExportDeployRequest) -> S.ExportDeployResponse:
    return handlers.handle_export_deploy(req)


@app.post("/infer", response_model=S.InferResponse)
def infer(req: S.InferRequest) -> S.InferResponse:
    return handlers.handle_infer(req)
