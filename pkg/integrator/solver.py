"""
Implicit time stepping for the split problem
Newton solves of (I + h A_B) U = U_prev + h f_B, randomized and deterministic drivers
"""

from dataclasses import dataclass, field
from typing import Callable, List, Literal, Optional, Tuple
import logging

import numpy as np
import scipy.sparse as sp
from prometheus_client import Counter, Histogram
from pydantic import BaseModel, ConfigDict, Field
from scipy.sparse.linalg import cg, spsolve

from discretization.decomposition import Decomposition
from discretization.grid import (
    GridFunction,
    NonFiniteGridError,
    SpatialGrid2D,
    TimeGrid,
    coarsen_grid,
    h_norm,
    l2_distance,
    restrict_to_coarse,
)
from discretization.operators import BatchOperator, ProblemSpec, SplitOperator, batch_rhs
from integrator.sampler import (
    BatchDraw,
    RngStream,
    StrategySpec,
    active_set,
    activity_indicator,
    draw_batch,
)

logger = logging.getLogger(__name__)

# Prometheus metrics
steps_counter = Counter(
    'randsplit_steps_total',
    'Implicit steps solved',
    ['kind']
)
newton_histogram = Histogram(
    'randsplit_newton_iterations',
    'Newton iterations per implicit step',
    buckets=(0, 1, 2, 3, 4, 5, 6, 8, 10, 15, 20, 30, 50)
)
energy_violations = Counter(
    'randsplit_energy_violations_total',
    'Steps whose energy slack fell below tolerance'
)

# Sufficient-decrease constant of the backtracking line search
ARMIJO = 1e-4


class SolverConfig(BaseModel):
    """Nonlinear and linear solver settings"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    newton_tol: float = Field(default=1e-10, gt=0.0, description="Relative residual tolerance")
    newton_max_iters: int = Field(default=50, ge=1, description="Newton iteration cap")
    linear_tol: float = Field(default=1e-12, gt=0.0, description="Inner linear solve relative tolerance")
    linear_solver: Literal["cg", "direct"] = Field(default="cg", description="Inner linear solver")
    max_halvings: int = Field(default=30, ge=0, description="Line-search step halvings")


class SolverError(RuntimeError):
    """Failure of an implicit step, tagged with where it happened"""

    def __init__(self, message: str, step: Optional[int] = None, realization: Optional[int] = None):
        super().__init__(message)
        self.step = step
        self.realization = realization

    def __reduce__(self):
        return (self.__class__, (self.args[0], self.step, self.realization))

    def __str__(self):
        message = super().__str__()
        where = []
        if self.realization is not None:
            where.append(f"realization {self.realization}")
        if self.step is not None:
            where.append(f"step {self.step}")
        return f"{message} ({', '.join(where)})" if where else message


class NonConvergenceError(SolverError):
    """Newton or the inner linear solver missed its tolerance"""


class NonFiniteValueError(SolverError):
    """An iterate or residual became NaN or infinite"""


@dataclass(frozen=True, eq=False)
class StepResult:
    """Accepted implicit step"""

    U_n: GridFunction
    newton_iters: int
    final_residual: float
    energy_slack: float
    batch_used: Optional[BatchDraw]
    tol_diag: float = 0.0
    residual_history: Tuple[float, ...] = ()
    weighted_power: float = 0.0
    rhs_norm: float = 0.0

    @property
    def energy_ok(self) -> bool:
        return self.energy_slack >= -self.tol_diag


@dataclass
class StepRecord:
    """Per-step metadata kept on a trajectory"""

    step: int
    t: float
    h: float
    batch: Tuple[int, ...]
    newton_iters: int
    final_residual: float
    energy_slack: float
    tol_diag: float
    active: Optional[Tuple[int, ...]] = None


@dataclass
class Trajectory:
    """
    Output of a time-marching run

    states holds U^0..U^N, or only U^0 and U^N when the run did not keep
    intermediate states.
    """

    time_grid: TimeGrid
    states: List[GridFunction]
    steps: List[StepRecord] = field(default_factory=list)
    num_subdomains: int = 1
    # Running sums of the a priori stability estimate
    increment_sum: float = 0.0
    dissipation_sum: float = 0.0
    data_sum: float = 0.0

    @property
    def initial(self) -> GridFunction:
        return self.states[0]

    @property
    def final(self) -> GridFunction:
        return self.states[-1]

    @property
    def energy_violations(self) -> int:
        return sum(1 for s in self.steps if s.energy_slack < -s.tol_diag)

    @property
    def min_energy_margin(self) -> float:
        """Smallest slack + tol_diag over all steps (>= 0 when no step violates)"""
        if not self.steps:
            return 0.0
        return min(s.energy_slack + s.tol_diag for s in self.steps)

    @property
    def mean_batch_fraction(self) -> float:
        """Mean share of subdomains used per step"""
        if not self.steps:
            return 0.0
        return float(np.mean([len(s.batch) / self.num_subdomains for s in self.steps]))

    @property
    def apriori_lhs(self) -> float:
        return h_norm(self.final) ** 2 + self.increment_sum + self.dissipation_sum

    @property
    def apriori_rhs(self) -> float:
        return 2.0 * h_norm(self.initial) ** 2 + 5.0 * self.time_grid.T * self.data_sum


def _H_norm(grid: SpatialGrid2D, vector: np.ndarray) -> float:
    return float(np.sqrt(grid.cell_area * np.dot(vector, vector)))


def _linear_solve(matrix: sp.csr_matrix, rhs: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    if cfg.linear_solver == "direct":
        return spsolve(matrix.tocsc(), rhs)
    solution, info = cg(matrix, rhs, rtol=cfg.linear_tol, atol=0.0, maxiter=10 * rhs.size)
    if info > 0:
        raise NonConvergenceError(f"conjugate gradients stopped after {info} iterations")
    if info < 0:
        raise SolverError(f"conjugate gradients failed with code {info}")
    return solution


def implicit_step(
    U_prev: GridFunction,
    t_n: float,
    h_n: float,
    op: BatchOperator,
    f_n: GridFunction,
    cfg: Optional[SolverConfig] = None,
) -> StepResult:
    """
    Solve U - U_prev + h_n A_B(t_n) U = h_n f_n

    Newton from U_prev with backtracking on 1/2 ||R||_H^2. For p = 2 the
    first Newton update is the exact linear solve.

    Args:
        U_prev: Previous state
        t_n: Evaluation time of the operator (carried by op)
        h_n: Step size
        op: Batch operator A_B(t_n)
        f_n: Batch right-hand side
        cfg: Solver settings

    Returns:
        StepResult with the energy slack already evaluated

    Raises:
        NonConvergenceError: Tolerance missed within newton_max_iters
        NonFiniteValueError: NaN or infinity in an iterate
    """
    cfg = cfg or SolverConfig()
    if h_n <= 0.0:
        raise ValueError(f"step size must be positive, got {h_n}")
    grid = U_prev.grid
    if f_n.grid != grid or op.grid != grid:
        raise ValueError("state, source and operator live on different grids")

    b = U_prev.interior() + h_n * f_n.interior()
    target = cfg.newton_tol * max(1.0, h_norm(U_prev))

    if op.is_empty:
        U_n = GridFunction.from_interior(grid, b)
        steps_counter.labels(kind="empty").inc()
        newton_histogram.observe(0)
        return _accept(U_prev, U_n, h_n, op, f_n, cfg, 0, 0.0, (0.0,))

    def residual(x: np.ndarray) -> np.ndarray:
        # overflow in the operator maps to an infinite residual
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                applied = op.apply_interior(x)
            except NonFiniteGridError:
                return np.full_like(x, np.inf)
        return x - b + h_n * applied

    x = U_prev.interior().copy()
    r = residual(x)
    rnorm = _H_norm(grid, r)
    if not np.isfinite(rnorm):
        raise NonFiniteValueError("non-finite residual at the initial iterate")
    history = [rnorm]
    identity = sp.identity(x.size, format="csr")
    iters = 0

    while rnorm > target:
        if iters >= cfg.newton_max_iters:
            raise NonConvergenceError(
                f"Newton residual {rnorm:.3e} above {target:.3e} after {iters} iterations"
            )
        matrix = identity + h_n * op.jacobian_matrix(GridFunction.from_interior(grid, x))
        dx = _linear_solve(matrix, -r, cfg)
        if not np.all(np.isfinite(dx)):
            raise NonFiniteValueError(f"non-finite Newton update at iteration {iters}")

        merit = 0.5 * rnorm ** 2
        step = 1.0
        for _ in range(cfg.max_halvings + 1):
            trial = x + step * dx
            r_trial = residual(trial)
            trial_norm = _H_norm(grid, r_trial)
            if np.isfinite(trial_norm) and (
                trial_norm <= target or 0.5 * trial_norm ** 2 <= (1.0 - 2.0 * ARMIJO * step) * merit
            ):
                break
            step *= 0.5
        else:
            if not np.isfinite(trial_norm):
                raise NonFiniteValueError(
                    f"non-finite residual after {cfg.max_halvings} step halvings at iteration {iters}"
                )
            if trial_norm >= rnorm:
                raise NonConvergenceError(
                    f"line search found no decrease from residual {rnorm:.3e}"
                )

        x, r, rnorm = trial, r_trial, trial_norm
        iters += 1
        history.append(rnorm)
        logger.debug(f"Newton iteration {iters}: residual {rnorm:.3e}, step {step:g}")

    if not np.all(np.isfinite(x)):
        raise NonFiniteValueError("non-finite state after Newton")

    steps_counter.labels(kind=f"p{op.p:g}").inc()
    newton_histogram.observe(iters)
    U_n = GridFunction.from_interior(grid, x)
    return _accept(U_prev, U_n, h_n, op, f_n, cfg, iters, rnorm, tuple(history))


def _accept(U_prev, U_n, h_n, op, f_n, cfg, iters, rnorm, history) -> StepResult:
    power = op.weighted_power(U_n)
    slack = _energy_slack(U_prev, U_n, h_n, power, f_n)
    tol_diag = energy_tolerance(U_prev, cfg)
    if slack < -tol_diag:
        energy_violations.inc()
        logger.warning(f"Energy slack {slack:.3e} below -{tol_diag:.3e}")
    return StepResult(
        U_n=U_n,
        newton_iters=iters,
        final_residual=rnorm,
        energy_slack=slack,
        batch_used=op.draw,
        tol_diag=tol_diag,
        residual_history=history,
        weighted_power=power,
        rhs_norm=h_norm(f_n),
    )


def energy_tolerance(U_prev: GridFunction, cfg: Optional[SolverConfig] = None) -> float:
    """tol_diag = 10 * newton_tol * (1 + ||U_prev||_H^2)"""
    cfg = cfg or SolverConfig()
    return 10.0 * cfg.newton_tol * (1.0 + h_norm(U_prev) ** 2)


def _energy_slack(U_prev, U_n, h_n, power, f_n) -> float:
    norm_n = h_norm(U_n)
    lhs = norm_n ** 2 - h_norm(U_prev) ** 2 + l2_distance(U_n, U_prev) ** 2 + 2.0 * h_n * power
    return 2.0 * h_n * h_norm(f_n) * norm_n - lhs


def check_energy_inequality(
    U_prev: GridFunction,
    U_n: GridFunction,
    h_n: float,
    op: BatchOperator,
    f_n: GridFunction,
    p: Optional[float] = None,
) -> float:
    """
    Slack of the one-step energy estimate

    2 h ||f|| ||U_n|| - (||U_n||^2 - ||U_prev||^2 + ||U_n - U_prev||^2
    + 2 h sum_{l in B} alpha |U_n|^p_{V_l} / tau_l). Nonnegative for an exact
    step; compare against energy_tolerance for a Newton-accurate one.
    """
    if p is not None and float(p) != op.p:
        raise ValueError(f"exponent {p} does not match the operator's p={op.p}")
    return _energy_slack(U_prev, U_n, h_n, op.weighted_power(U_n), f_n)


def _check_step_condition(time_grid: TimeGrid, kappa: float):
    if 2.0 * kappa * time_grid.h >= 1.0:
        raise ValueError(f"step condition 2*kappa*h < 1 fails: kappa={kappa}, h={time_grid.h}")


def _record(trajectory: Trajectory, n: int, t_n: float, h_n: float, U_prev: GridFunction,
            result: StepResult, active=None) -> StepRecord:
    if result.batch_used is None:
        batch = tuple(range(trajectory.num_subdomains))
    else:
        batch = tuple(result.batch_used.batch)
    record = StepRecord(
        step=n,
        t=t_n,
        h=h_n,
        batch=batch,
        newton_iters=result.newton_iters,
        final_residual=result.final_residual,
        energy_slack=result.energy_slack,
        tol_diag=result.tol_diag,
        active=tuple(sorted(active)) if active is not None else None,
    )
    trajectory.steps.append(record)
    trajectory.increment_sum += l2_distance(result.U_n, U_prev) ** 2
    trajectory.dissipation_sum += 2.0 * h_n * result.weighted_power
    trajectory.data_sum += h_n * result.rhs_norm ** 2
    return record


StepCallback = Callable[[StepRecord], None]


def run_backward_euler(
    problem: ProblemSpec,
    time_grid: TimeGrid,
    cfg: Optional[SolverConfig] = None,
    grid: Optional[SpatialGrid2D] = None,
    keep_states: bool = True,
) -> Trajectory:
    """
    Backward Euler on the unsplit problem

    Args:
        problem: Problem data; u0 is restricted by injection when grid is coarser
        time_grid: Time nodes
        cfg: Solver settings
        grid: Grid to solve on (defaults to the problem grid)
        keep_states: Keep every U^n instead of only U^0 and U^N

    Returns:
        Deterministic Trajectory
    """
    cfg = cfg or SolverConfig()
    grid = grid or problem.grid
    _check_step_condition(time_grid, BatchOperator.kappa)
    U = _initial_on(problem, grid)
    marcher = _BackwardEulerMarcher(problem, grid, cfg, U)
    trajectory = Trajectory(time_grid, [U])
    for n in range(1, time_grid.N + 1):
        U_prev = marcher.state
        result = marcher.advance(n, float(time_grid.nodes[n]), float(time_grid.steps[n - 1]))
        _record(trajectory, n, float(time_grid.nodes[n]), float(time_grid.steps[n - 1]), U_prev, result)
        if keep_states:
            trajectory.states.append(result.U_n)
    if not keep_states:
        trajectory.states.append(marcher.state)
    return trajectory


def _initial_on(problem: ProblemSpec, grid: SpatialGrid2D) -> GridFunction:
    if grid == problem.grid:
        return problem.u0
    fine = problem.grid
    factor = (fine.nx - 1) // (grid.nx - 1)
    if coarsen_grid(fine, factor) != grid:
        raise ValueError("target grid is not an injection coarsening of the problem grid")
    return restrict_to_coarse(problem.u0, factor)


class _BackwardEulerMarcher:
    """Backward Euler with the full operator, advanced one step at a time"""

    def __init__(self, problem: ProblemSpec, grid: SpatialGrid2D, cfg: SolverConfig, U0: GridFunction):
        self.problem = problem
        self.grid = grid
        self.cfg = cfg
        self.state = U0

    def advance(self, n: int, t_n: float, h_n: float) -> StepResult:
        op = BatchOperator.full(
            self.grid, self.problem.p, self.problem.alpha(t_n), t_n, self.problem.stencil
        )
        f_n = self.problem.source_at(t_n, self.grid)
        try:
            result = implicit_step(self.state, t_n, h_n, op, f_n, self.cfg)
        except SolverError as exc:
            exc.step = n
            raise
        self.state = result.U_n
        return result


def run_randomized(
    problem: ProblemSpec,
    decomposition: Decomposition,
    strategy: StrategySpec,
    time_grid: TimeGrid,
    cfg: Optional[SolverConfig] = None,
    seed: int = 0,
    realization: int = 0,
    keep_states: bool = False,
    on_step: Optional[StepCallback] = None,
) -> Trajectory:
    """
    Randomized splitting scheme

    At step n the batch xi_n is drawn from the stream (seed, realization, n),
    f^n = f_B(t_n) and U^n solves the implicit step with A_B(t_n). The
    predictor strategy first advances a coarse backward Euler trajectory
    Z^n and selects the active set from Z^{n-1}, Z^n and f(t_n).

    Args:
        problem: Problem on the decomposition's grid
        decomposition: Subdomains and partition of unity
        strategy: Batch law
        time_grid: Time nodes
        cfg: Solver settings
        seed: Experiment seed
        realization: Realization index
        keep_states: Keep every U^n
        on_step: Called with each StepRecord

    Returns:
        Trajectory of this realization

    Raises:
        SolverError: With step and realization attached
    """
    cfg = cfg or SolverConfig()
    _check_step_condition(time_grid, BatchOperator.kappa)
    split = SplitOperator(decomposition, problem)
    s = decomposition.s

    predictor = None
    if strategy.kind == "predictor":
        coarse = coarsen_grid(problem.grid, strategy.coarse_factor)
        predictor = _BackwardEulerMarcher(problem, coarse, cfg, _initial_on(problem, coarse))

    U = problem.u0
    trajectory = Trajectory(time_grid, [U], num_subdomains=s)
    for n in range(1, time_grid.N + 1):
        t_n = float(time_grid.nodes[n])
        h_n = float(time_grid.steps[n - 1])
        try:
            active = None
            if predictor is not None:
                Z_prev = predictor.state
                Z = predictor.advance(n, t_n, h_n).U_n
                psi = activity_indicator(Z_prev, Z, problem.source_at(t_n, predictor.grid), strategy.threshold)
                active = active_set(psi, decomposition, strategy.rho)

            draw = draw_batch(strategy, RngStream(seed, realization, n), s, active)
            op = split.batch(draw, t_n)
            f_n = batch_rhs(problem.source_at(t_n), draw, decomposition)
            result = implicit_step(U, t_n, h_n, op, f_n, cfg)
        except SolverError as exc:
            exc.step = n
            exc.realization = realization
            logger.error(f"Realization {realization} failed: {exc}")
            raise

        record = _record(trajectory, n, t_n, h_n, U, result, active)
        if on_step is not None:
            on_step(record)
        U = result.U_n
        if keep_states:
            trajectory.states.append(U)

    if not keep_states:
        trajectory.states.append(U)
    logger.debug(
        f"Realization {realization} done: {time_grid.N} steps, "
        f"batch fraction {trajectory.mean_batch_fraction:.3f}, "
        f"{trajectory.energy_violations} energy violations"
    )
    return trajectory
