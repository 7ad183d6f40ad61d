"""FastAPI application exposing the pipeline operations."""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import ConfigError, DataError, IrisBsifError, NumericError
from . import models, ops

_HTTP_STATUS = {ConfigError: 422, DataError: 400, NumericError: 500}


def create_app() -> FastAPI:
    app = FastAPI(title="irisbsif", version=__version__)

    @app.exception_handler(IrisBsifError)
    async def _package_error(request, exc: IrisBsifError):
        return JSONResponse(
            status_code=_HTTP_STATUS.get(type(exc), 500),
            content={"detail": {"category": exc.category, "message": str(exc)}},
        )

    @app.get("/health", response_model=models.HealthResponse)
    def health():
        return models.HealthResponse(status="ok", version=__version__)

    @app.post("/patches/extract", response_model=models.ExtractPatchesResponse)
    def extract_patches(req: models.ExtractPatchesRequest):
        return ops.extract_patches_op(req)

    @app.post("/train", response_model=models.TrainResponse)
    def train(req: models.TrainRequest):
        return ops.train_op(req)

    @app.post("/train/grid", response_model=models.TrainGridResponse)
    def train_grid(req: models.TrainGridRequest):
        return ops.train_grid_op(req)

    @app.post("/encode", response_model=models.EncodeResponse)
    def encode(req: models.EncodeRequest):
        return ops.encode_op(req)

    @app.post("/compare", response_model=models.CompareResponse)
    def compare(req: models.CompareRequest):
        return ops.compare_op(req)

    @app.post("/eval", response_model=models.EvalResponse)
    def evaluate(req: models.EvalRequest):
        return ops.eval_op(req)

    @app.post("/eval/compare-methods", response_model=models.CompareMethodsResponse)
    def compare_methods(req: models.CompareMethodsRequest):
        return ops.compare_methods_op(req)

    return app
