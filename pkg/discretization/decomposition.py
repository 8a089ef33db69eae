"""
Overlapping rectangular domain decomposition
Subdomains, partition-of-unity weights and batch scaling factors
"""

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple
import logging

import numpy as np

from discretization.grid import Bounds, CellField, DEFAULT_BOUNDS, SpatialGrid2D

logger = logging.getLogger(__name__)


class SplitMode(str, Enum):
    """How an interface overlap band is shared between two neighbors"""

    SYMMETRIC = "symmetric"
    PAPER_COMPAT = "paper_compat"


@dataclass(frozen=True)
class Subdomain:
    """
    Axis-aligned rectangle D_l with the widths of its overlap ramps

    ramp_x = (left, right) and ramp_y = (bottom, top) are the widths of the
    overlap bands on each side; 0 on sides touching the outer boundary.
    """

    index: int
    x0: float
    x1: float
    y0: float
    y1: float
    ramp_x: Tuple[float, float] = (0.0, 0.0)
    ramp_y: Tuple[float, float] = (0.0, 0.0)

    @property
    def rect(self) -> Tuple[float, float, float, float]:
        return (self.x0, self.x1, self.y0, self.y1)

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return (x >= self.x0) & (x <= self.x1) & (y >= self.y0) & (y <= self.y1)

    def profile(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Unnormalized tensor-product trapezoid"""
        return (
            _trapezoid(np.asarray(x, dtype=float), self.x0, self.x1, *self.ramp_x)
            * _trapezoid(np.asarray(y, dtype=float), self.y0, self.y1, *self.ramp_y)
        )


def _trapezoid(s: np.ndarray, lo: float, hi: float, left: float, right: float) -> np.ndarray:
    inside = (s >= lo) & (s <= hi)
    rise = np.clip((s - lo) / left, 0.0, 1.0) if left > 0.0 else np.ones_like(s)
    fall = np.clip((hi - s) / right, 0.0, 1.0) if right > 0.0 else np.ones_like(s)
    return np.where(inside, np.minimum(rise, fall), 0.0)


def _axis_intervals(
    lo: float, hi: float, M: int, overlap: float, split_mode: SplitMode
) -> List[Tuple[float, float, float, float]]:
    """
    Per-cell (start, end, left ramp, right ramp) along one axis

    Interface k separates base cells k-1 and k; cell k-1 extends right by a
    share of the overlap and cell k extends left by the rest.
    """
    width = (hi - lo) / M
    edges = [lo + k * width for k in range(M + 1)]
    edges[-1] = hi
    extend_right = [0.0] * M
    extend_left = [0.0] * M
    for k in range(1, M):
        left_cell, right_cell = k - 1, k
        left_share = right_share = overlap / 2.0
        if split_mode is SplitMode.PAPER_COMPAT:
            left_on_boundary = left_cell == 0
            right_on_boundary = right_cell == M - 1
            if left_on_boundary and not right_on_boundary:
                left_share, right_share = overlap / 3.0, 2.0 * overlap / 3.0
            elif right_on_boundary and not left_on_boundary:
                left_share, right_share = 2.0 * overlap / 3.0, overlap / 3.0
        extend_right[left_cell] = left_share
        extend_left[right_cell] = right_share

    intervals = []
    for c in range(M):
        start = max(lo, edges[c] - extend_left[c])
        end = min(hi, edges[c + 1] + extend_right[c])
        left_ramp = overlap if c > 0 else 0.0
        right_ramp = overlap if c < M - 1 else 0.0
        intervals.append((start, end, left_ramp, right_ramp))
    return intervals


def build_subdomains(
    Mx: int,
    My: int,
    overlap: float,
    split_mode: SplitMode = SplitMode.SYMMETRIC,
    bounds: Bounds = DEFAULT_BOUNDS,
) -> List[Subdomain]:
    """
    Overlapping Mx x My rectangles covering the domain

    Args:
        Mx: Subdomains along x
        My: Subdomains along y
        overlap: Total width of each internal overlap band
        split_mode: How each band is shared between its two neighbors
        bounds: Outer rectangle (ax, bx, ay, by)

    Returns:
        Subdomains indexed x-fastest: index = ix + Mx * iy
    """
    split_mode = SplitMode(split_mode)
    if Mx < 1 or My < 1:
        raise ValueError(f"need Mx, My >= 1, got Mx={Mx}, My={My}")
    if overlap < 0.0:
        raise ValueError(f"overlap must be >= 0, got {overlap}")
    ax, bx, ay, by = bounds
    base = min((bx - ax) / Mx, (by - ay) / My)
    if (Mx > 1 or My > 1) and overlap >= base:
        raise ValueError(f"overlap {overlap} must be smaller than the base cell width {base:.6g}")

    xs = _axis_intervals(ax, bx, Mx, overlap, split_mode)
    ys = _axis_intervals(ay, by, My, overlap, split_mode)
    subdomains = []
    for iy, (y0, y1, yb, yt) in enumerate(ys):
        for ix, (x0, x1, xl, xr) in enumerate(xs):
            subdomains.append(
                Subdomain(
                    index=ix + Mx * iy,
                    x0=x0, x1=x1, y0=y0, y1=y1,
                    ramp_x=(xl, xr),
                    ramp_y=(yb, yt),
                )
            )
    return subdomains


def evaluate_weights(subdomains: Iterable[Subdomain], x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """
    Normalized partition-of-unity values at arbitrary points

    Returns:
        Array of shape (s,) + x.shape

    Raises:
        ValueError: If some point has zero total weight
    """
    raw = np.stack([d.profile(x, y) for d in subdomains])
    total = raw.sum(axis=0)
    if np.any(total <= 0.0):
        raise ValueError("subdomains do not cover every evaluation point")
    return raw / total


def build_partition_of_unity(subdomains: List[Subdomain], grid: SpatialGrid2D) -> List[CellField]:
    """
    Partition-of-unity weights chi_l sampled at cell centers

    Args:
        subdomains: Covering family of subdomains
        grid: Grid whose cell centers are sampled

    Returns:
        One CellField per subdomain, summing to 1 at every cell center
    """
    X, Y = grid.cell_coordinates()
    weights = evaluate_weights(subdomains, X, Y)
    return [CellField(grid, w) for w in weights]


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Subdomains plus their partition of unity on a solver grid"""

    grid: SpatialGrid2D
    Mx: int
    My: int
    overlap: float
    split_mode: SplitMode
    subdomains: Tuple[Subdomain, ...]
    chi: Tuple[CellField, ...]

    @property
    def s(self) -> int:
        return len(self.subdomains)

    def chi_stack(self) -> np.ndarray:
        """Cell weights as an array of shape (s, nx-1, ny-1)"""
        return np.stack([c.values for c in self.chi])

    def chi_nodes(self, grid: Optional[SpatialGrid2D] = None) -> np.ndarray:
        """
        Partition-of-unity weights at the nodes of a grid

        Returns:
            Array of shape (s, nx, ny)
        """
        return _node_weights(self.subdomains, grid or self.grid)


@lru_cache(maxsize=16)
def _node_weights(subdomains: Tuple[Subdomain, ...], grid: SpatialGrid2D) -> np.ndarray:
    X, Y = grid.node_coordinates()
    weights = evaluate_weights(subdomains, X, Y)
    weights.setflags(write=False)
    return weights


def build_decomposition(
    grid: SpatialGrid2D,
    Mx: int,
    My: int,
    overlap: float,
    split_mode: SplitMode = SplitMode.SYMMETRIC,
) -> Decomposition:
    """Subdomains over the grid's rectangle with chi sampled at its cell centers"""
    split_mode = SplitMode(split_mode)
    bounds = (grid.ax, grid.bx, grid.ay, grid.by)
    subdomains = tuple(build_subdomains(Mx, My, overlap, split_mode, bounds))
    chi = tuple(build_partition_of_unity(list(subdomains), grid))
    logger.debug(f"Built {len(subdomains)} subdomains ({Mx}x{My}, overlap={overlap}, {split_mode.value})")
    return Decomposition(grid, Mx, My, float(overlap), split_mode, subdomains, chi)


@dataclass(frozen=True, eq=False)
class BatchWeights:
    """Per-subdomain inclusion probabilities tau_l"""

    tau: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        if np.any(tau <= 0.0) or np.any(tau > 1.0 + 1e-15):
            raise ValueError(f"every tau must lie in (0, 1], got {tau}")
        tau = tau.copy()
        tau.setflags(write=False)
        object.__setattr__(self, "tau", tau)

    @property
    def inv_tau(self) -> np.ndarray:
        return 1.0 / self.tau


def tau_from_pmf(
    kind: str,
    s: int,
    k: int = 1,
    rho: Optional[float] = None,
    active: Optional[FrozenSet[int]] = None,
) -> BatchWeights:
    """
    Exact tau_l = P(l in batch) for a batch law

    Args:
        kind: "uniform_single", "uniform_k" or "predictor"
        s: Number of subdomains
        k: Draws with replacement (uniform_k)
        rho: Probability of selecting the inactive set (predictor)
        active: Active subdomains for the current step (predictor)

    Returns:
        BatchWeights

    Raises:
        ValueError: If the law leaves some subdomain with tau = 0
    """
    if s < 1:
        raise ValueError(f"need s >= 1, got {s}")
    if kind == "uniform_single":
        tau = np.full(s, 1.0 / s)
    elif kind == "uniform_k":
        if k < 1:
            raise ValueError(f"need k >= 1, got {k}")
        tau = np.full(s, 1.0 - (1.0 - 1.0 / s) ** k)
    elif kind == "predictor":
        if rho is None or not 0.0 < rho < 1.0:
            raise ValueError(f"predictor needs rho in (0, 1), got {rho}")
        if active is None:
            raise ValueError("predictor needs the active set of the step")
        tau = np.array([1.0 - rho if l in active else rho for l in range(s)])
    else:
        raise ValueError(f"unknown strategy kind: {kind}")
    return BatchWeights(tau)


def expected_cell_weight(
    decomposition: Decomposition, law: Iterable[Tuple[float, FrozenSet[int]]], weights: BatchWeights
) -> np.ndarray:
    """
    sum_B P(B) * sum_{l in B} chi_l / tau_l at every cell center

    Equals 1 everywhere exactly when the scaled batch operator is unbiased.
    """
    chi = decomposition.chi_stack()
    inv_tau = weights.inv_tau
    total = np.zeros(decomposition.grid.cell_shape)
    for prob, batch in law:
        for l in batch:
            total += prob * inv_tau[l] * chi[l]
    return total


def subdomain_summary(decomposition: Decomposition) -> Dict[int, Tuple[float, float, float, float]]:
    """Rectangles rounded to 3 decimals, keyed by index"""
    return {d.index: tuple(round(v, 3) for v in d.rect) for d in decomposition.subdomains}
