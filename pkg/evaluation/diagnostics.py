"""
Invariant checks for a configured experiment
Partition of unity, unbiasedness, splitting, monotonicity and the energy inequality
"""

from typing import Any, Dict, List, Optional
import logging

import numpy as np

from discretization.decomposition import expected_cell_weight
from discretization.grid import GridFunction, TimeGrid, inner_product
from discretization.operators import BatchOperator, SplitOperator
from experiments.config import ExperimentConfig
from experiments.montecarlo import build_setup
from integrator.sampler import StrategySpec, enumerate_batches, strategy_weights
from integrator.solver import SolverError, run_randomized

logger = logging.getLogger(__name__)


class InvariantChecks:
    """
    Structural and pathwise checks run by `check`
    """

    def __init__(self, config: Optional[Dict[str, Any]] = None):
        """
        Initialize checks

        Args:
            config: Tolerances and sample counts
        """
        self.config = config or self._default_config()

    @staticmethod
    def _default_config() -> Dict[str, Any]:
        """Default tolerances"""
        return {
            "partition_tol": 1e-12,
            "unbiased_tol": 1e-12,
            "splitting_tol": 1e-12,
            "monotonicity_tol": 1e-10,
            "random_samples": 20,
            "energy_run_steps": 8,
            "seed": 1234,
        }

    def run(self, experiment: ExperimentConfig) -> Dict[str, Any]:
        """
        Run every check against an experiment

        Args:
            experiment: Experiment whose grid, decomposition and strategies are checked

        Returns:
            Check results with pass/fail, warnings, errors and per-check details
        """
        checks = {
            "passed": True,
            "warnings": [],
            "errors": [],
            "results": {},
        }
        grid, decomposition, problem = build_setup(experiment)
        rng = np.random.default_rng(self.config["seed"])

        # 1. Partition of unity
        chi = decomposition.chi_stack()
        deviation = float(np.max(np.abs(chi.sum(axis=0) - 1.0)))
        X, Y = grid.cell_coordinates()
        outside = max(
            (float(np.max(np.abs(chi[d.index][~d.contains(X, Y)]), initial=0.0)) for d in decomposition.subdomains),
            default=0.0,
        )
        self._record(checks, "partition_of_unity", deviation <= self.config["partition_tol"] and outside == 0.0,
                     {"max_sum_deviation": deviation, "max_outside_support": outside})

        # 2. Unbiasedness certificate
        strategies = self._strategies(experiment)
        worst = 0.0
        for strategy in strategies:
            for active in self._active_sets(strategy, decomposition.s):
                law = enumerate_batches(strategy, decomposition.s, active)
                weights = strategy_weights(strategy, decomposition.s, active)
                total = expected_cell_weight(decomposition, law, weights)
                worst = max(worst, float(np.max(np.abs(total - 1.0))))
        self._record(checks, "unbiasedness", worst <= self.config["unbiased_tol"],
                     {"max_deviation": worst, "strategies": [s.label for s in strategies]})

        # 3. Splitting consistency
        split = SplitOperator(decomposition, problem)
        full = split.full(0.0)
        worst = 0.0
        for _ in range(self.config["random_samples"]):
            u = GridFunction.from_interior(grid, rng.standard_normal(grid.num_interior))
            total = sum(split.part(l, 0.0).apply_operator(u).values for l in range(decomposition.s))
            reference = full.apply_operator(u).values
            worst = max(worst, float(np.linalg.norm(total - reference) / max(np.linalg.norm(reference), 1e-300)))
        self._record(checks, "splitting_consistency", worst <= self.config["splitting_tol"],
                     {"max_relative_error": worst})

        # 4. Monotonicity of the full operator
        lowest = self._monotonicity(full, rng)
        self._record(checks, "monotonicity", lowest >= -self.config["monotonicity_tol"],
                     {"min_scaled_pairing": lowest})

        # 5. Energy inequality on a short run
        self._energy_run(checks, experiment, problem, decomposition)

        if not checks["passed"]:
            logger.warning(f"Invariant checks failed: {checks['errors']}")
        return checks

    def _record(self, checks: Dict[str, Any], name: str, passed: bool, details: Dict[str, Any]):
        checks["results"][name] = {"passed": bool(passed), **details}
        if not passed:
            checks["passed"] = False
            checks["errors"].append(f"{name} violated: {details}")

    @staticmethod
    def _strategies(experiment: ExperimentConfig) -> List[StrategySpec]:
        strategies = list(experiment.strategies)
        for extra in (StrategySpec(kind="uniform_single"), StrategySpec(kind="uniform_k", k=2)):
            if extra not in strategies:
                strategies.append(extra)
        return strategies

    @staticmethod
    def _active_sets(strategy: StrategySpec, s: int):
        if strategy.kind != "predictor":
            return [None]
        return [frozenset(), frozenset({0}), frozenset(range(s))]

    def _monotonicity(self, op: BatchOperator, rng: np.random.Generator) -> float:
        grid = op.grid
        lowest = np.inf
        for _ in range(self.config["random_samples"]):
            u = GridFunction.from_interior(grid, rng.standard_normal(grid.num_interior))
            w = GridFunction.from_interior(grid, rng.standard_normal(grid.num_interior))
            diff = u - w
            pairing = inner_product(op.apply_operator(u) - op.apply_operator(w), diff)
            scale = abs(inner_product(op.apply_operator(u), u)) + abs(inner_product(op.apply_operator(w), w)) + 1.0
            lowest = min(lowest, pairing / scale)
        return float(lowest)

    def _energy_run(self, checks, experiment, problem, decomposition):
        h = max(experiment.step_sizes)
        steps = min(self.config["energy_run_steps"], int(round(problem.T / h)))
        time_grid = TimeGrid.uniform(steps * h, h)
        for strategy in experiment.strategies:
            try:
                trajectory = run_randomized(
                    problem, decomposition, strategy, time_grid, experiment.solver,
                    seed=experiment.seed, realization=0,
                )
            except SolverError as e:
                self._record(checks, f"energy_inequality[{strategy.label}]", False, {"solver_error": str(e)})
                continue
            empty = sum(1 for s in trajectory.steps if not s.batch)
            if empty:
                checks["warnings"].append(f"{empty} empty batches in the {strategy.label} run")
            self._record(
                checks,
                f"energy_inequality[{strategy.label}]",
                trajectory.energy_violations == 0,
                {
                    "steps": len(trajectory.steps),
                    "violations": trajectory.energy_violations,
                    "min_margin": trajectory.min_energy_margin,
                },
            )
