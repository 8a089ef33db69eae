"""
Monte Carlo error estimation over independent realizations
"""

import math
import random

import pytest

from experiments.montecarlo import (
    RealizationResult,
    convergence_records,
    deterministic_error,
    mc_error,
    run_realization,
    summarize,
)
from integrator.sampler import StrategySpec
from integrator.solver import NonConvergenceError


def _result(j, sq, lhs=1.0, rhs=2.0):
    return RealizationResult(
        realization=j,
        sq_error=sq,
        mean_batch_fraction=0.5,
        energy_violations=0,
        min_energy_margin=1e-3,
        apriori_lhs=lhs,
        apriori_rhs=rhs,
    )


def test_summarize_identical_realizations_has_zero_std_err():
    record = summarize([_result(j, 0.04) for j in range(5)], 2.0, StrategySpec(), 0.125)
    assert record.rel_error == pytest.approx(0.1, rel=1e-14)
    assert record.std_err == 0.0
    assert record.apriori_ratio == pytest.approx(0.5)
    assert (record.strategy, record.param, record.reps) == ("uniform_single", "k=1", 5)


def test_summarize_delta_method():
    record = summarize([_result(0, 1.0), _result(1, 4.0)], 1.0, StrategySpec(), 0.25)
    assert record.rel_error == pytest.approx(math.sqrt(2.5))
    assert record.std_err == pytest.approx(1.5 / (2.0 * math.sqrt(2.5)))


def test_summarize_is_independent_of_completion_order():
    results = [_result(j, 0.1 + 0.37 * j ** 1.5) for j in range(20)]
    shuffled = list(results)
    random.Random(3).shuffle(shuffled)
    strategy = StrategySpec(kind="uniform_k", k=2)
    a = summarize(results, 1.3, strategy, 0.1)
    b = summarize(shuffled, 1.3, strategy, 0.1)
    assert (a.rel_error, a.std_err) == (b.rel_error, b.std_err)


def test_summarize_rejects_zero_reference():
    with pytest.raises(ValueError):
        summarize([_result(0, 1.0)], 0.0, StrategySpec(), 0.1)


def test_single_subdomain_estimator_is_deterministic(small_config):
    config = small_config.model_copy(update={"Mx": 1, "My": 1})
    record = mc_error(config, 0.125, workers=1)
    assert record.std_err == 0.0
    assert record.mean_batch_fraction == 1.0
    assert record.rel_error == pytest.approx(deterministic_error(config, 0.125), rel=1e-13)


def test_record_diagnostics(small_config):
    record = mc_error(small_config, 0.125, workers=1)
    assert record.reps == 3
    assert record.rel_error > 0.0
    assert record.mean_batch_fraction == pytest.approx(1 / 3)
    assert record.energy_violations == 0
    assert record.min_energy_margin >= 0.0
    assert 0.0 < record.apriori_ratio <= 1.0


def test_worker_count_does_not_change_estimate(small_config):
    sequential = mc_error(small_config, 0.0625, workers=1)
    pooled = mc_error(small_config, 0.0625, workers=2)
    assert pooled.rel_error == sequential.rel_error
    assert pooled.std_err == sequential.std_err


def test_realizations_are_reproducible(small_config):
    strategy = StrategySpec(kind="uniform_k", k=2)
    a = run_realization(small_config, strategy, 0.125, 1, keep_steps=True)
    b = run_realization(small_config, strategy, 0.125, 1, keep_steps=True)
    assert a.sq_error == b.sq_error
    assert [s.batch for s in a.steps] == [s.batch for s in b.steps]
    assert len(a.steps) == 8


def test_step_sink_collects_every_step(small_config):
    sink = []
    mc_error(small_config, 0.125, workers=1, step_sink=sink)
    assert len(sink) == 3 * 8
    assert sorted({j for j, _ in sink}) == [0, 1, 2]


def test_convergence_records_largest_step_first(small_config):
    records = convergence_records(small_config, small_config.strategy, workers=1)
    assert [r.h for r in records] == [0.125, 0.0625, 0.03125]


def test_realization_failure_aborts_the_record(small_config):
    config = small_config.model_copy(update={
        "problem": small_config.problem.model_copy(update={"kind": "plaplace_pulse"}),
        "solver": small_config.solver.model_copy(update={"newton_max_iters": 1, "newton_tol": 1e-15}),
        "reps": 2,
    })
    with pytest.raises(NonConvergenceError) as info:
        mc_error(config, 0.125, workers=1)
    assert info.value.realization == 0
    assert info.value.step == 1
