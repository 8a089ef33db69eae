"""
Monte Carlo error estimation
Independent realizations of the randomized scheme fanned out to a process pool
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Tuple
import logging
import math
import os
import time

from prometheus_client import Counter, Histogram
from pydantic import BaseModel, Field

from discretization.decomposition import Decomposition, build_decomposition
from discretization.grid import SpatialGrid2D, TimeGrid, build_grid, h_norm, l2_distance
from discretization.operators import ProblemSpec
from experiments.config import ExperimentConfig
from experiments.problems import ManufacturedProblem, exact_solution, to_problem_spec
from integrator.sampler import StrategySpec
from integrator.solver import StepRecord, run_backward_euler, run_randomized

logger = logging.getLogger(__name__)

# Prometheus metrics
realizations_counter = Counter(
    'randsplit_realizations_total',
    'Realizations of the randomized scheme',
    ['status']
)
record_seconds = Histogram(
    'randsplit_record_seconds',
    'Wall-clock seconds per Monte Carlo error record',
    buckets=(0.1, 0.5, 1, 5, 10, 30, 60, 120, 300, 600, 1800)
)


class ErrorRecord(BaseModel):
    """Monte Carlo estimate of the relative final-time error at one step size"""

    strategy: str
    param: str
    h: float = Field(..., gt=0.0)
    rel_error: float = Field(..., ge=0.0, description="sqrt(mean ||U^N - U_ref||^2) / ||U_ref||")
    std_err: float = Field(default=0.0, ge=0.0, description="Delta-method standard error of rel_error")
    reps: int = Field(..., ge=1)
    seconds: float = Field(default=0.0, ge=0.0)
    # Not written to the CSV
    mean_batch_fraction: float = Field(default=1.0, ge=0.0, le=1.0)
    apriori_ratio: float = Field(default=0.0, ge=0.0, description="Mean stability LHS over mean RHS")
    energy_violations: int = Field(default=0, ge=0)
    min_energy_margin: float = 0.0

    def csv_row(self) -> dict:
        return {
            "strategy": self.strategy,
            "param": self.param,
            "h": self.h,
            "rel_error": self.rel_error,
            "std_err": self.std_err,
            "reps": self.reps,
            "seconds": self.seconds,
        }


@dataclass
class RealizationResult:
    """Scalar summary of one realization"""

    realization: int
    sq_error: float
    mean_batch_fraction: float
    energy_violations: int
    min_energy_margin: float
    apriori_lhs: float
    apriori_rhs: float
    steps: List[StepRecord] = field(default_factory=list)


@lru_cache(maxsize=8)
def _setup(problem: ManufacturedProblem, nodes: int, Mx: int, My: int, overlap: float,
           split_mode, stencil) -> Tuple[SpatialGrid2D, Decomposition, ProblemSpec]:
    grid = build_grid(nodes, nodes)
    decomposition = build_decomposition(grid, Mx, My, overlap, split_mode)
    return grid, decomposition, to_problem_spec(problem, grid, stencil)


def build_setup(config: ExperimentConfig) -> Tuple[SpatialGrid2D, Decomposition, ProblemSpec]:
    """Grid, decomposition and solver problem of a config (cached per process)"""
    return _setup(
        config.problem, config.nodes, config.Mx, config.My, config.overlap,
        config.split_mode, config.stencil,
    )


def run_realization(
    config: ExperimentConfig,
    strategy: StrategySpec,
    h: float,
    realization: int,
    keep_steps: bool = False,
) -> RealizationResult:
    """
    One realization at step size h

    Returns:
        Squared H-norm error at T against the sampled exact solution
    """
    grid, decomposition, problem = build_setup(config)
    time_grid = TimeGrid.uniform(problem.T, h)
    try:
        trajectory = run_randomized(
            problem, decomposition, strategy, time_grid, config.solver,
            seed=config.seed, realization=realization,
        )
    except Exception:
        realizations_counter.labels(status="failed").inc()
        raise
    realizations_counter.labels(status="ok").inc()
    reference = exact_solution(config.problem, time_grid.T, grid)
    return RealizationResult(
        realization=realization,
        sq_error=l2_distance(trajectory.final, reference) ** 2,
        mean_batch_fraction=trajectory.mean_batch_fraction,
        energy_violations=trajectory.energy_violations,
        min_energy_margin=trajectory.min_energy_margin,
        apriori_lhs=trajectory.apriori_lhs,
        apriori_rhs=trajectory.apriori_rhs,
        steps=list(trajectory.steps) if keep_steps else [],
    )


def _realization_task(args) -> RealizationResult:
    return run_realization(*args)


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def run_realizations(
    config: ExperimentConfig,
    strategy: StrategySpec,
    h: float,
    workers: Optional[int] = None,
    keep_steps: bool = False,
) -> List[RealizationResult]:
    """All realizations of a config at step size h, ordered by realization index"""
    tasks = [(config, strategy, h, j, keep_steps) for j in range(config.reps)]
    workers = min(workers or default_workers(), config.reps)
    if workers <= 1:
        return [_realization_task(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_realization_task, tasks))


def summarize(
    results: List[RealizationResult],
    ref_norm: float,
    strategy: StrategySpec,
    h: float,
    seconds: float = 0.0,
) -> ErrorRecord:
    """
    Relative error and delta-method standard error from per-realization results

    Sums run in realization order with compensated summation.
    """
    if ref_norm <= 0.0:
        raise ValueError("reference solution has zero norm; relative error undefined")
    results = sorted(results, key=lambda r: r.realization)
    n = len(results)
    sq = [r.sq_error for r in results]
    mean = math.fsum(sq) / n
    rel_error = math.sqrt(mean) / ref_norm

    std_err = 0.0
    if n > 1 and mean > 0.0 and max(sq) > min(sq):
        variance = math.fsum((x - mean) ** 2 for x in sq) / (n - 1)
        se_mean = math.sqrt(variance / n)
        std_err = se_mean / (2.0 * math.sqrt(mean)) / ref_norm

    lhs = math.fsum(r.apriori_lhs for r in results) / n
    rhs = math.fsum(r.apriori_rhs for r in results) / n
    return ErrorRecord(
        strategy=strategy.kind,
        param=strategy.param,
        h=h,
        rel_error=rel_error,
        std_err=std_err,
        reps=n,
        seconds=seconds,
        mean_batch_fraction=math.fsum(r.mean_batch_fraction for r in results) / n,
        apriori_ratio=lhs / rhs if rhs > 0.0 else 0.0,
        energy_violations=sum(r.energy_violations for r in results),
        min_energy_margin=min(r.min_energy_margin for r in results),
    )


def mc_error(
    config: ExperimentConfig,
    h: float,
    strategy: Optional[StrategySpec] = None,
    workers: Optional[int] = None,
    step_sink: Optional[list] = None,
) -> ErrorRecord:
    """
    Monte Carlo relative error at step size h

    Args:
        config: Experiment
        h: Step size dividing T
        strategy: Strategy to run (defaults to config.strategy)
        workers: Process count (1 runs in-process)
        step_sink: If given, receives (realization, StepRecord) pairs

    Returns:
        ErrorRecord

    Raises:
        SolverError: A realization failed; the record is not produced
    """
    strategy = strategy or config.strategy
    start_time = time.time()
    results = run_realizations(config, strategy, h, workers, keep_steps=step_sink is not None)
    if step_sink is not None:
        for result in results:
            step_sink.extend((result.realization, step) for step in result.steps)

    grid, _, problem = build_setup(config)
    ref_norm = h_norm(exact_solution(config.problem, problem.T, grid))
    duration = time.time() - start_time
    record = summarize(results, ref_norm, strategy, h, seconds=duration)
    record_seconds.observe(duration)

    if record.apriori_ratio > 1.0:
        logger.warning(f"A priori ratio {record.apriori_ratio:.3f} > 1 at h={h:g} ({strategy.label})")
    if record.energy_violations:
        logger.warning(f"{record.energy_violations} energy-inequality violations at h={h:g}")
    logger.info(
        f"{strategy.label} h={h:g}: rel_error={record.rel_error:.4e} "
        f"(+/- {record.std_err:.2e}), batch fraction {record.mean_batch_fraction:.3f}, {duration:.1f}s"
    )
    return record


def convergence_records(
    config: ExperimentConfig,
    strategy: StrategySpec,
    workers: Optional[int] = None,
    step_sink: Optional[list] = None,
) -> List[ErrorRecord]:
    """mc_error over every configured step size, largest h first"""
    return [
        mc_error(config, h, strategy, workers, step_sink)
        for h in sorted(config.step_sizes, reverse=True)
    ]


def deterministic_error(config: ExperimentConfig, h: float) -> float:
    """Relative error of unsplit backward Euler at step size h"""
    grid, _, problem = build_setup(config)
    trajectory = run_backward_euler(problem, TimeGrid.uniform(problem.T, h), config.solver, keep_states=False)
    reference = exact_solution(config.problem, problem.T, grid)
    return l2_distance(trajectory.final, reference) / h_norm(reference)


