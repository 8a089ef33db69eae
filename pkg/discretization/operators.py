"""
Weighted p-Laplacian operator family
Energy, operator action, Jacobian and batch assembly for the split problem
"""

from dataclasses import dataclass
from typing import Callable, Optional
import logging

import numpy as np
import scipy.sparse as sp

from discretization.decomposition import Decomposition
from discretization.grid import (
    CellField,
    GridFunction,
    SpatialGrid2D,
    Stencil,
    interior_selector,
    quadrature_gradients,
)

logger = logging.getLogger(__name__)

SourceFn = Callable[[float, SpatialGrid2D], GridFunction]


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """
    Parabolic p-Laplacian problem data

    du/dt - div(alpha(t) |grad u|^(p-2) grad u) = f, homogeneous Dirichlet
    """

    p: float
    alpha: Callable[[float], float]
    T: float
    u0: GridFunction
    source: Optional[SourceFn] = None
    stencil: Stencil = Stencil.CORNER

    def __post_init__(self):
        if self.p < 2.0:
            raise ValueError(f"p must be >= 2, got {self.p}")
        if self.T <= 0.0:
            raise ValueError(f"T must be positive, got {self.T}")

    @property
    def grid(self) -> SpatialGrid2D:
        return self.u0.grid

    def source_at(self, t: float, grid: Optional[SpatialGrid2D] = None) -> GridFunction:
        grid = grid or self.grid
        if self.source is None:
            return GridFunction.zeros(grid)
        return self.source(t, grid)


class BatchOperator:
    """
    Scaled sum of subdomain operators at a fixed time

    The action is the exact gradient of the convex energy
        J(u) = sum_q omega_q sum_c hx*hy * w_c * alpha * |G_qc u|^p / p
    with cell weights w_c = sum_{l in batch} chi_l(c) / tau_l, taken with
    respect to the discrete L2 pairing over interior nodes. The gradient
    pairs G_q and their weights omega_q come from the stencil.
    """

    # Monotonicity shift of the family; the p-Laplacian is monotone as is.
    kappa = 0.0

    def __init__(
        self,
        grid: SpatialGrid2D,
        p: float,
        alpha: float,
        cell_weight: np.ndarray,
        draw=None,
        t: float = 0.0,
        stencil: Stencil = Stencil.CORNER,
    ):
        if p < 2.0:
            raise ValueError(f"p must be >= 2, got {p}")
        weight = np.asarray(cell_weight, dtype=float)
        if weight.shape != grid.cell_shape:
            raise ValueError(f"cell weight shape {weight.shape} does not match {grid.cell_shape}")
        self.grid = grid
        self.p = float(p)
        self.alpha = float(alpha)
        self.cell_weight = weight
        self.draw = draw
        self.t = float(t)
        self.stencil = Stencil(stencil)
        self._pairs = quadrature_gradients(grid, self.stencil)
        self._P = interior_selector(grid)

    @classmethod
    def full(
        cls, grid: SpatialGrid2D, p: float, alpha: float, t: float = 0.0,
        stencil: Stencil = Stencil.CORNER,
    ) -> "BatchOperator":
        """Unsplit operator A(t): unit weight on every cell"""
        return cls(grid, p, alpha, np.ones(grid.cell_shape), draw=None, t=t, stencil=stencil)

    @property
    def is_empty(self) -> bool:
        return not np.any(self.cell_weight)

    def _gradients(self, u: GridFunction):
        """(omega, Gx, Gy, gx, gy) per gradient pair"""
        if u.grid != self.grid:
            raise ValueError("grid function lives on a different grid")
        flat = u.values.ravel()
        shape = self.grid.cell_shape
        return [
            (omega, Gx, Gy, (Gx @ flat).reshape(shape), (Gy @ flat).reshape(shape))
            for omega, Gx, Gy in self._pairs
        ]

    def discrete_energy(self, u: GridFunction) -> float:
        total = 0.0
        for omega, _, _, gx, gy in self._gradients(u):
            total += omega * np.sum(self.cell_weight * np.hypot(gx, gy) ** self.p)
        return float(self.grid.cell_area * self.alpha * total / self.p)

    def weighted_power(self, u: GridFunction) -> float:
        """sum_{l in batch} alpha |u|^p_{V_l} / tau_l, i.e. <A u, u>_H"""
        return self.p * self.discrete_energy(u)

    def apply_operator(self, u: GridFunction) -> GridFunction:
        """
        A_B(t) u as a nodal field

        <apply_operator(u), v>_H equals dJ(u)[v] for interior-supported v.
        """
        values = np.zeros(self.grid.num_nodes)
        for omega, Gx, Gy, gx, gy in self._gradients(u):
            coef = omega * self.alpha * self.cell_weight * np.hypot(gx, gy) ** (self.p - 2.0)
            values += Gx.T @ (coef * gx).ravel() + Gy.T @ (coef * gy).ravel()
        values = values.reshape(self.grid.shape)
        values[~self.grid.interior_mask()] = 0.0
        return GridFunction(self.grid, values)

    def apply_interior(self, vector: np.ndarray) -> np.ndarray:
        return self.apply_operator(GridFunction.from_interior(self.grid, vector)).interior()

    def jacobian_matrix(self, u: GridFunction) -> sp.csr_matrix:
        """
        Hessian of J at u restricted to interior unknowns

        Per cell and gradient pair the flux derivative is
            alpha * w * (|g|^(p-2) I + (p-2) |g|^(p-4) g g^T),
        with the rank-one part set to 0 where g = 0.
        """
        full = sp.csr_matrix((self.grid.num_nodes, self.grid.num_nodes))
        for omega, Gx, Gy, gx, gy in self._gradients(u):
            magnitude = np.hypot(gx, gy)
            scale = omega * self.alpha * self.cell_weight
            iso = scale * magnitude ** (self.p - 2.0)
            if self.p > 2.0:
                with np.errstate(divide="ignore", invalid="ignore"):
                    rank_one = np.where(
                        magnitude > 0.0,
                        scale * (self.p - 2.0) * magnitude ** (self.p - 4.0),
                        0.0,
                    )
            else:
                rank_one = np.zeros_like(iso)
            dxx = sp.diags((iso + rank_one * gx * gx).ravel())
            dyy = sp.diags((iso + rank_one * gy * gy).ravel())
            dxy = sp.diags((rank_one * gx * gy).ravel())
            full = full + Gx.T @ dxx @ Gx + Gx.T @ dxy @ Gy + Gy.T @ dxy @ Gx + Gy.T @ dyy @ Gy
        P = self._P
        return (P @ full @ P.T).tocsr()

    def jacobian_apply(self, u: GridFunction, v: GridFunction) -> GridFunction:
        return GridFunction.from_interior(self.grid, self.jacobian_matrix(u) @ v.interior())


class SplitOperator:
    """Subdomain operators A_l(t) built from a decomposition and a problem"""

    def __init__(self, decomposition: Decomposition, problem: ProblemSpec):
        if decomposition.grid != problem.grid:
            raise ValueError("decomposition and problem live on different grids")
        self.decomposition = decomposition
        self.problem = problem
        self.chi = decomposition.chi_stack()

    @property
    def grid(self) -> SpatialGrid2D:
        return self.decomposition.grid

    @property
    def s(self) -> int:
        return self.decomposition.s

    def part(self, index: int, t: float) -> BatchOperator:
        """A_l(t) without any scaling"""
        return BatchOperator(
            self.grid, self.problem.p, self.problem.alpha(t), self.chi[index],
            t=t, stencil=self.problem.stencil,
        )

    def full(self, t: float) -> BatchOperator:
        return BatchOperator.full(self.grid, self.problem.p, self.problem.alpha(t), t, self.problem.stencil)

    def batch(self, draw, t: float) -> BatchOperator:
        """A_B(t) = sum_{l in B} A_l(t) / tau_l"""
        weight = self.cell_weight(draw).values
        return BatchOperator(
            self.grid, self.problem.p, self.problem.alpha(t), weight,
            draw=draw, t=t, stencil=self.problem.stencil,
        )

    def cell_weight(self, draw) -> CellField:
        """w_c = sum_{l in B} chi_l(c) / tau_l"""
        weight = np.zeros(self.grid.cell_shape)
        for l in draw.batch:
            weight += draw.inv_tau[l] * self.chi[l]
        return CellField(self.grid, weight)


def batch_rhs(f_full: GridFunction, draw, decomposition: Decomposition) -> GridFunction:
    """
    f_B = sum_{l in B} chi_l f / tau_l, nodewise

    chi_l is evaluated at the nodes of f_full's grid from the same trapezoid
    profiles that define the cell weights.
    """
    chi = decomposition.chi_nodes(f_full.grid)
    factor = np.zeros(f_full.grid.shape)
    for l in draw.batch:
        factor += draw.inv_tau[l] * chi[l]
    return GridFunction(f_full.grid, factor * f_full.values, f_full.dirichlet)
