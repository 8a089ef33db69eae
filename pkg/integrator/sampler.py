"""
Randomized batch selection
Uniform and predictor-driven subdomain strategies with stream-keyed randomness
"""

from dataclasses import dataclass
from itertools import product
from typing import Dict, FrozenSet, List, Literal, Optional, Tuple
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from discretization.decomposition import BatchWeights, Decomposition, tau_from_pmf
from discretization.grid import GridFunction, h_norm

logger = logging.getLogger(__name__)


class StrategySpec(BaseModel):
    """Batch selection strategy"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["uniform_single", "uniform_k", "predictor"] = Field(
        default="uniform_single", description="Batch law"
    )
    k: int = Field(default=1, ge=1, description="Draws with replacement (uniform_k)")
    rho: float = Field(default=0.01, gt=0.0, lt=1.0, description="Inactive-set probability (predictor)")
    threshold: float = Field(default=1e-3, gt=0.0, description="Activity cutoff (predictor)")
    coarse_factor: int = Field(default=2, ge=1, description="Predictor mesh coarsening (predictor)")

    @model_validator(mode="after")
    def _single_means_one_draw(self):
        if self.kind == "uniform_single" and self.k != 1:
            raise ValueError("uniform_single draws exactly one subdomain; use uniform_k for k > 1")
        return self

    @property
    def param(self) -> str:
        """Strategy parameter as written to result files"""
        if self.kind == "predictor":
            return f"rho={self.rho:g}"
        return f"k={self.k}"

    @property
    def label(self) -> str:
        return f"{self.kind}[{self.param}]"


@dataclass(frozen=True)
class BatchDraw:
    """Selected subdomains and their 1/tau scalings"""

    batch: Tuple[int, ...]
    inv_tau: Dict[int, float]

    def __post_init__(self):
        for l in self.batch:
            if self.inv_tau[l] < 1.0 - 1e-12:
                raise ValueError(f"1/tau must be >= 1, got {self.inv_tau[l]} for subdomain {l}")

    @property
    def is_empty(self) -> bool:
        return not self.batch

    def __hash__(self):
        return hash(self.batch)


@dataclass(frozen=True)
class RngStream:
    """
    Counter-based random stream keyed by (seed, realization, step)

    Identical keys give identical draws regardless of execution order.
    """

    seed: int
    realization: int
    step: int

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, self.realization, self.step]))


def strategy_weights(strategy: StrategySpec, s: int, active: Optional[FrozenSet[int]] = None) -> BatchWeights:
    return tau_from_pmf(strategy.kind, s, k=strategy.k, rho=strategy.rho, active=active)


def draw_batch(
    strategy: StrategySpec,
    rng: RngStream,
    s: int,
    active: Optional[FrozenSet[int]] = None,
) -> BatchDraw:
    """
    Sample one batch

    Args:
        strategy: Batch law
        rng: Stream for this (realization, step)
        s: Number of subdomains
        active: Active set of the step (predictor only)

    Returns:
        BatchDraw; the predictor may return an empty batch
    """
    generator = rng.generator()
    inv_tau = strategy_weights(strategy, s, active).inv_tau

    if strategy.kind == "uniform_single":
        members = (int(generator.integers(s)),)
    elif strategy.kind == "uniform_k":
        members = tuple(sorted({int(l) for l in generator.integers(s, size=strategy.k)}))
    else:
        if generator.random() < 1.0 - strategy.rho:
            members = tuple(sorted(active))
        else:
            members = tuple(l for l in range(s) if l not in active)
        if not members:
            logger.warning(f"Empty predictor batch at step {rng.step} (realization {rng.realization})")

    return BatchDraw(members, {l: float(inv_tau[l]) for l in members})


def enumerate_batches(
    strategy: StrategySpec, s: int, active: Optional[FrozenSet[int]] = None
) -> List[Tuple[float, FrozenSet[int]]]:
    """
    Exact batch law as (probability, batch) pairs

    uniform_k is enumerated over all s^k ordered draws and collapsed to sets.
    """
    if strategy.kind == "uniform_single":
        return [(1.0 / s, frozenset({l})) for l in range(s)]
    if strategy.kind == "uniform_k":
        law: Dict[FrozenSet[int], float] = {}
        weight = (1.0 / s) ** strategy.k
        for draws in product(range(s), repeat=strategy.k):
            key = frozenset(draws)
            law[key] = law.get(key, 0.0) + weight
        return [(prob, batch) for batch, prob in law.items()]
    if active is None:
        raise ValueError("predictor law needs the active set")
    inactive = frozenset(range(s)) - frozenset(active)
    return [(1.0 - strategy.rho, frozenset(active)), (strategy.rho, inactive)]


def activity_indicator(
    Z_prev: GridFunction, Z_cur: GridFunction, f_n: GridFunction, threshold: float
) -> GridFunction:
    """Psi = 1 where |Z_prev| + |Z_cur| + |f_n| > threshold, else 0"""
    if not (Z_prev.grid == Z_cur.grid == f_n.grid):
        raise ValueError("activity inputs live on different grids")
    level = np.abs(Z_prev.values) + np.abs(Z_cur.values) + np.abs(f_n.values)
    return GridFunction(Z_prev.grid, (level > threshold).astype(float), dirichlet=False)


def active_set(psi: GridFunction, decomposition: Decomposition, rho: float) -> FrozenSet[int]:
    """
    Subdomains passing ||Psi chi_l|| >= rho ||Psi||

    Norms are discrete L2 norms on psi's grid, with chi_l evaluated at its nodes.
    """
    chi = decomposition.chi_nodes(psi.grid)
    reference = rho * h_norm(psi)
    selected = set()
    for l in range(decomposition.s):
        local = GridFunction(psi.grid, psi.values * chi[l], dirichlet=False)
        if h_norm(local) >= reference:
            selected.add(l)
    return frozenset(selected)
