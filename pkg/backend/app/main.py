"""
Randomized Splitting - Experiment API Gateway
FastAPI application for running convergence experiments and invariant checks
"""

from fastapi import FastAPI, HTTPException
from fastapi.concurrency import run_in_threadpool
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import PlainTextResponse
from prometheus_client import Counter, Histogram, generate_latest
from pydantic import BaseModel, Field
from typing import Any, Dict, List, Optional
from datetime import datetime
import logging
import time

import numpy as np
import scipy

from evaluation.diagnostics import InvariantChecks
from experiments import __version__
from experiments.config import ConfigError, ExperimentConfig
from experiments.fitting import ConvergenceFit, fit_order
from experiments.montecarlo import ErrorRecord, convergence_records
from experiments.telemetry import RuntimeSettings, configure_logging
from integrator.solver import SolverError

settings = configure_logging(RuntimeSettings())
logger = logging.getLogger(__name__)

# Prometheus metrics
request_counter = Counter(
    'randsplit_requests_total',
    'Total experiment requests',
    ['endpoint', 'status']
)
response_time = Histogram(
    'randsplit_response_seconds',
    'Response time in seconds',
    ['endpoint']
)

app = FastAPI(
    title="Randomized Splitting Experiments",
    description="Monte Carlo convergence studies of randomized domain-decomposition splitting",
    version=__version__
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["http://localhost:3000"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


class ExperimentResponse(BaseModel):
    """Error records of one experiment and the fitted order per strategy"""
    name: str
    seed: int
    records: List[ErrorRecord] = Field(default_factory=list)
    fits: Dict[str, ConvergenceFit] = Field(default_factory=dict)
    seconds: float = Field(..., ge=0.0)
    timestamp: datetime = Field(default_factory=datetime.utcnow)


class HealthCheck(BaseModel):
    """Health check response"""
    status: str
    timestamp: datetime
    versions: Dict[str, str]


@app.get("/", tags=["Root"])
async def root():
    """Root endpoint"""
    return {
        "service": "Randomized Splitting Experiments",
        "version": __version__,
        "status": "operational",
        "docs": "/docs"
    }


@app.get("/health", response_model=HealthCheck, tags=["Health"])
async def health_check():
    """Service status and numerical stack versions"""
    return HealthCheck(
        status="healthy",
        timestamp=datetime.utcnow(),
        versions={"service": __version__, "numpy": np.__version__, "scipy": scipy.__version__}
    )


def _run_experiment(config: ExperimentConfig) -> ExperimentResponse:
    start_time = time.time()
    records: List[ErrorRecord] = []
    fits: Dict[str, ConvergenceFit] = {}
    for strategy in config.strategies:
        strategy_records = convergence_records(config, strategy, settings.threads)
        records.extend(strategy_records)
        try:
            fits[strategy.label] = fit_order(strategy_records, config.fit_range)
        except ValueError as e:
            logger.info(f"No order fit for {strategy.label}: {e}")
    return ExperimentResponse(
        name=config.name,
        seed=config.seed,
        records=records,
        fits=fits,
        seconds=time.time() - start_time
    )


@app.post("/experiments/run", response_model=ExperimentResponse, tags=["Experiments"])
async def run_experiment(config: ExperimentConfig, seed: Optional[int] = None):
    """
    Run every configured strategy over the configured step sizes
    Invalid configs are rejected with 422 before any solve starts
    """
    start_time = time.time()
    try:
        if seed is not None:
            config = config.with_overrides(seed=seed)
        logger.info(f"Running experiment '{config.name}' with seed {config.seed}")
        response = await run_in_threadpool(_run_experiment, config)

        duration = time.time() - start_time
        request_counter.labels(endpoint="/experiments/run", status="success").inc()
        response_time.labels(endpoint="/experiments/run").observe(duration)
        logger.info(f"Experiment '{config.name}' finished in {duration:.2f}s")
        return response

    except ConfigError as e:
        request_counter.labels(endpoint="/experiments/run", status="invalid").inc()
        raise HTTPException(status_code=422, detail=str(e))
    except SolverError as e:
        logger.error(f"Solver failure: {e}", exc_info=True)
        request_counter.labels(endpoint="/experiments/run", status="error").inc()
        raise HTTPException(status_code=500, detail=f"Solver failure: {e}")


@app.post("/experiments/check", tags=["Experiments"])
async def check_experiment(config: ExperimentConfig) -> Dict[str, Any]:
    """Invariant suite for a config: partition of unity, unbiasedness, energy inequality"""
    start_time = time.time()
    report = await run_in_threadpool(InvariantChecks().run, config)
    status = "success" if report["passed"] else "violated"
    request_counter.labels(endpoint="/experiments/check", status=status).inc()
    response_time.labels(endpoint="/experiments/check").observe(time.time() - start_time)
    return report


@app.get("/metrics", tags=["Monitoring"])
async def metrics():
    """
    Prometheus metrics endpoint
    Returns metrics in Prometheus format
    """
    return PlainTextResponse(generate_latest().decode("utf-8"))


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
