"""
Implicit steps, energy slack and the time-marching drivers
"""

import pickle

import numpy as np
import pytest

from discretization.decomposition import SplitMode, build_decomposition
from discretization.grid import GridFunction, TimeGrid, build_grid, h_norm, inner_product, l2_distance
from discretization.operators import BatchOperator
from integrator.sampler import StrategySpec
from integrator.solver import (
    NonConvergenceError,
    NonFiniteValueError,
    SolverConfig,
    SolverError,
    check_energy_inequality,
    energy_tolerance,
    implicit_step,
    run_backward_euler,
    run_randomized,
)

from conftest import heat_problem, random_field


def _mode(grid):
    return GridFunction.from_function(
        grid, lambda X, Y: np.sin(np.pi * (X + 1) / 2) * np.sin(np.pi * (Y + 1) / 2)
    )


def _smooth_source(t, grid):
    return GridFunction.from_function(grid, lambda X, Y: np.cos(t) * (1 - X ** 2) * (1 - Y ** 2))


def test_empty_batch_is_explicit_update(grid21, rng):
    op = BatchOperator(grid21, 4.0, 1.0, np.zeros(grid21.cell_shape))
    U = random_field(grid21, rng)
    f = random_field(grid21, rng)
    result = implicit_step(U, 0.1, 0.05, op, f)
    assert result.newton_iters == 0
    assert np.allclose(result.U_n.values, U.values + 0.05 * f.values, atol=1e-15)
    assert result.energy_ok


@pytest.mark.parametrize("nodes", [3, 4, 5, 7, 9])
@pytest.mark.parametrize("linear_solver", ["cg", "direct"])
def test_linear_step_matches_dense_solve(rng, nodes, linear_solver):
    grid = build_grid(nodes, nodes)
    cfg = SolverConfig(linear_solver=linear_solver)
    for trial in range(2):
        op = BatchOperator(grid, 2.0, 1.0, rng.uniform(0.0, 2.0, grid.cell_shape))
        U = random_field(grid, rng)
        f = random_field(grid, rng)
        h = float(rng.uniform(0.01, 0.5))
        A = op.jacobian_matrix(GridFunction.zeros(grid)).toarray()
        expected = np.linalg.solve(np.eye(grid.num_interior) + h * A, U.interior() + h * f.interior())
        result = implicit_step(U, 0.0, h, op, f, cfg)
        error = result.U_n.interior() - expected
        assert np.sqrt(grid.cell_area * error @ error) <= 1e-10 * max(1.0, h_norm(U))


def test_eigenvector_decays_by_resolvent_factor(grid21):
    u0 = _mode(grid21)
    op = BatchOperator.full(grid21, 2.0, 1.0)
    Au = op.apply_operator(u0)
    lam = inner_product(Au, u0) / inner_product(u0, u0)
    assert np.allclose(Au.values, lam * u0.values, atol=1e-10 * lam)

    h = 0.1
    result = implicit_step(u0, h, h, op, GridFunction.zeros(grid21))
    assert np.allclose(result.U_n.values, u0.values / (1.0 + h * lam), atol=1e-10)


def test_zero_data_stays_zero(grid21):
    zero = GridFunction.zeros(grid21)
    result = implicit_step(zero, 0.1, 0.1, BatchOperator.full(grid21, 4.0, 1.0), zero)
    assert result.newton_iters == 0
    assert np.all(result.U_n.values == 0.0)


def test_small_step_consistency(grid21):
    u = _mode(grid21)
    f = _smooth_source(0.0, grid21)
    op = BatchOperator.full(grid21, 2.0, 1.0)
    h = 1e-6
    result = implicit_step(u, h, h, op, f)
    drift = f.values - op.apply_operator(u).values
    increment = result.U_n.values - u.values
    assert np.linalg.norm(increment - h * drift) <= 1e-2 * h * np.linalg.norm(drift)


@pytest.mark.parametrize("p", [2.0, 4.0])
def test_energy_slack_nonnegative(grid21, box_decomposition, rng, p):
    weight = 3.0 * box_decomposition.chi_stack()[[0, 4]].sum(axis=0)
    op = BatchOperator(grid21, p, 1.0, weight)
    U = random_field(grid21, rng)
    for h in (0.5, 0.05, 0.005):
        f = random_field(grid21, rng, scale=2.0)
        result = implicit_step(U, h, h, op, f)
        assert result.energy_slack >= -result.tol_diag
        assert result.tol_diag == pytest.approx(energy_tolerance(U))
        assert check_energy_inequality(U, result.U_n, h, op, f) == pytest.approx(result.energy_slack)
        U = result.U_n


def test_check_energy_inequality_rejects_other_exponent(grid21):
    zero = GridFunction.zeros(grid21)
    op = BatchOperator.full(grid21, 4.0, 1.0)
    with pytest.raises(ValueError):
        check_energy_inequality(zero, zero, 0.1, op, zero, p=2.0)


@pytest.mark.parametrize("p", [2.0, 4.0])
def test_step_is_contractive(grid21, rng, p):
    op = BatchOperator(grid21, p, 1.0, rng.uniform(0.0, 2.0, grid21.cell_shape))
    f = random_field(grid21, rng)
    U1, U2 = random_field(grid21, rng), random_field(grid21, rng)
    V1 = implicit_step(U1, 0.1, 0.1, op, f).U_n
    V2 = implicit_step(U2, 0.1, 0.1, op, f).U_n
    assert l2_distance(V1, V2) <= l2_distance(U1, U2) * (1 + 1e-9)


def test_newton_tail_converges_fast_for_p4(grid21):
    op = BatchOperator.full(grid21, 4.0, 1.0)
    u = 3.0 * _mode(grid21)
    result = implicit_step(u, 0.01, 0.01, op, _smooth_source(0.0, grid21))
    history = result.residual_history
    assert result.final_residual <= SolverConfig().newton_tol * max(1.0, h_norm(u))
    assert result.newton_iters <= 20
    assert len(history) >= 3
    assert history[-1] / history[-2] < 0.1


def test_newton_iteration_cap(grid21, rng):
    op = BatchOperator.full(grid21, 4.0, 1.0)
    cfg = SolverConfig(newton_max_iters=1, newton_tol=1e-14)
    with pytest.raises(NonConvergenceError):
        implicit_step(random_field(grid21, rng, scale=5.0), 0.1, 0.1, op, GridFunction.zeros(grid21), cfg)


def test_implicit_step_rejects_bad_input(grid21):
    zero = GridFunction.zeros(grid21)
    op = BatchOperator.full(grid21, 2.0, 1.0)
    with pytest.raises(ValueError):
        implicit_step(zero, 0.0, 0.0, op, zero)
    with pytest.raises(ValueError):
        implicit_step(zero, 0.1, 0.1, op, GridFunction.zeros(build_grid(11, 11)))


def test_operator_overflow_raises_non_finite_error(grid21, rng):
    op = BatchOperator.full(grid21, 4.0, 1.0)
    U_prev = random_field(grid21, rng, scale=1e120)
    assert np.isfinite(h_norm(U_prev))
    with pytest.raises(NonFiniteValueError, match="non-finite residual"):
        implicit_step(U_prev, 0.1, 0.1, op, GridFunction.zeros(grid21))


def test_solver_errors_survive_pickling():
    error = pickle.loads(pickle.dumps(NonConvergenceError("Newton stalled", step=3, realization=2)))
    assert isinstance(error, NonConvergenceError)
    assert (error.step, error.realization) == (3, 2)
    assert "realization 2, step 3" in str(error)
    assert str(NonFiniteValueError("nan")) == "nan"


def test_backward_euler_trajectory(grid21):
    problem = heat_problem(grid21, u0=_mode(grid21), source=_smooth_source)
    time_grid = TimeGrid.uniform(1.0, 0.125)
    trajectory = run_backward_euler(problem, time_grid)
    assert len(trajectory.states) == 9
    assert len(trajectory.steps) == 8
    assert trajectory.mean_batch_fraction == 1.0
    assert trajectory.energy_violations == 0
    assert trajectory.apriori_lhs <= trajectory.apriori_rhs

    light = run_backward_euler(problem, time_grid, keep_states=False)
    assert len(light.states) == 2
    assert np.array_equal(light.final.values, trajectory.final.values)


def test_backward_euler_on_coarser_grid(grid21):
    problem = heat_problem(grid21, u0=_mode(grid21))
    coarse = build_grid(11, 11)
    trajectory = run_backward_euler(problem, TimeGrid.uniform(1.0, 0.25), grid=coarse)
    assert trajectory.final.grid == coarse
    with pytest.raises(ValueError):
        run_backward_euler(problem, TimeGrid.uniform(1.0, 0.25), grid=build_grid(8, 8))


def test_single_subdomain_matches_backward_euler(grid21):
    problem = heat_problem(grid21, u0=_mode(grid21), source=_smooth_source, p=4.0)
    single = build_decomposition(grid21, 1, 1, 0.0)
    time_grid = TimeGrid.uniform(1.0, 0.125)
    for kind in ("uniform_single", "uniform_k"):
        randomized = run_randomized(problem, single, StrategySpec(kind=kind), time_grid, seed=3)
        deterministic = run_backward_euler(problem, time_grid)
        assert np.allclose(randomized.final.values, deterministic.final.values, atol=1e-13)
        assert randomized.mean_batch_fraction == 1.0


def test_randomized_runs_are_reproducible(grid21, strip_decomposition):
    problem = heat_problem(grid21, u0=_mode(grid21), source=_smooth_source)
    time_grid = TimeGrid.uniform(1.0, 0.0625)
    strategy = StrategySpec(kind="uniform_single")
    first = run_randomized(problem, strip_decomposition, strategy, time_grid, seed=9, realization=4)
    again = run_randomized(problem, strip_decomposition, strategy, time_grid, seed=9, realization=4)
    other = run_randomized(problem, strip_decomposition, strategy, time_grid, seed=9, realization=5)
    assert np.array_equal(first.final.values, again.final.values)
    assert [s.batch for s in first.steps] == [s.batch for s in again.steps]
    assert [s.batch for s in first.steps] != [s.batch for s in other.steps]
    assert first.energy_violations == 0
    assert first.mean_batch_fraction == pytest.approx(1 / 3)


def test_predictor_run_uses_active_set_or_complement(grid21, box_decomposition):
    problem = heat_problem(grid21, u0=_mode(grid21), source=_smooth_source)
    strategy = StrategySpec(kind="predictor", rho=0.2, coarse_factor=2)
    seen = []
    trajectory = run_randomized(
        problem, box_decomposition, strategy, TimeGrid.uniform(1.0, 0.125),
        seed=1, keep_states=True, on_step=seen.append,
    )
    assert len(seen) == 8
    assert len(trajectory.states) == 9
    for record in trajectory.steps:
        active = set(record.active)
        inactive = set(range(9)) - active
        assert set(record.batch) in (active, inactive)


def test_randomized_failure_carries_location(grid21, strip_decomposition, rng):
    problem = heat_problem(grid21, u0=random_field(grid21, rng, scale=5.0), p=4.0)
    cfg = SolverConfig(newton_max_iters=1, newton_tol=1e-14)
    with pytest.raises(NonConvergenceError) as info:
        run_randomized(
            problem, strip_decomposition, StrategySpec(kind="uniform_k", k=3),
            TimeGrid.uniform(1.0, 0.5), cfg, seed=0, realization=5,
        )
    assert info.value.step == 1
    assert info.value.realization == 5
    assert isinstance(info.value, SolverError)


def test_step_condition_guards_shifted_family(grid21, monkeypatch):
    problem = heat_problem(grid21)
    monkeypatch.setattr(BatchOperator, "kappa", 1.0)
    with pytest.raises(ValueError, match="kappa"):
        run_backward_euler(problem, TimeGrid.uniform(1.0, 0.5))
    run_backward_euler(problem, TimeGrid.uniform(1.0, 0.25))

    strips = build_decomposition(grid21, 3, 1, 0.2, SplitMode.SYMMETRIC)
    with pytest.raises(ValueError, match="kappa"):
        run_randomized(problem, strips, StrategySpec(), TimeGrid.uniform(1.0, 0.5))


def test_graded_time_grid(grid21):
    problem = heat_problem(grid21, u0=_mode(grid21))
    graded = TimeGrid.from_nodes([0.0, 0.1, 0.3, 0.6, 1.0])
    trajectory = run_backward_euler(problem, graded)
    assert [s.h for s in trajectory.steps] == pytest.approx([0.1, 0.2, 0.3, 0.4])
    assert h_norm(trajectory.final) < h_norm(trajectory.initial)
