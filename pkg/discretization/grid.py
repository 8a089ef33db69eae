"""
Uniform tensor grids and nodal fields
Quadrature, discrete L2 norm, weighted gradient seminorms and coarse restriction
"""

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Callable, Optional, Tuple
import logging

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

Bounds = Tuple[float, float, float, float]

DEFAULT_BOUNDS: Bounds = (-1.0, 1.0, -1.0, 1.0)


class NonFiniteGridError(ValueError):
    """A nodal field received NaN or infinite values"""


class Stencil(str, Enum):
    """
    Cell gradients entering the discrete energy

    corner: one corner-averaged gradient per cell.
    edge: the four one-sided gradients of a cell (bottom or top x-difference
    with left or right y-difference), each with quadrature weight 1/4; for
    p = 2 the operator is the five-point Laplacian.
    """

    CORNER = "corner"
    EDGE = "edge"


def _frozen(values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=float, copy=True)
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class SpatialGrid2D:
    """
    Uniform node grid on [ax,bx] x [ay,by]

    Nodes are indexed (i, j) with i along x and j along y. Nodal arrays have
    shape (nx, ny) and are flattened in C order, so the flat index of node
    (i, j) is i * ny + j.
    """

    nx: int
    ny: int
    ax: float
    bx: float
    ay: float
    by: float

    @property
    def hx(self) -> float:
        return (self.bx - self.ax) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.by - self.ay) / (self.ny - 1)

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def cell_shape(self) -> Tuple[int, int]:
        return (self.nx - 1, self.ny - 1)

    @property
    def num_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def num_cells(self) -> int:
        return (self.nx - 1) * (self.ny - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.ax, self.bx, self.nx)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.ay, self.by, self.ny)

    @property
    def x_centers(self) -> np.ndarray:
        x = self.x
        return 0.5 * (x[:-1] + x[1:])

    @property
    def y_centers(self) -> np.ndarray:
        y = self.y
        return 0.5 * (y[:-1] + y[1:])

    def node_coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """Coordinate arrays of shape (nx, ny)"""
        return np.meshgrid(self.x, self.y, indexing="ij")

    def cell_coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinate arrays of shape (nx-1, ny-1)"""
        return np.meshgrid(self.x_centers, self.y_centers, indexing="ij")

    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[1:-1, 1:-1] = True
        return mask

    @property
    def num_interior(self) -> int:
        return (self.nx - 2) * (self.ny - 2)


def build_grid(nx: int, ny: int, bounds: Bounds = DEFAULT_BOUNDS) -> SpatialGrid2D:
    """
    Build a uniform grid

    Args:
        nx: Nodes along x (>= 3)
        ny: Nodes along y (>= 3)
        bounds: (ax, bx, ay, by)

    Returns:
        SpatialGrid2D with hx = (bx - ax) / (nx - 1)
    """
    if nx < 3 or ny < 3:
        raise ValueError(f"node counts must be >= 3, got nx={nx}, ny={ny}")
    ax, bx, ay, by = (float(b) for b in bounds)
    if not (bx > ax and by > ay):
        raise ValueError(f"bounds must satisfy ax < bx and ay < by, got {bounds}")
    return SpatialGrid2D(int(nx), int(ny), ax, bx, ay, by)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real nodal field on a SpatialGrid2D"""

    grid: SpatialGrid2D
    values: np.ndarray
    dirichlet: bool = True

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise NonFiniteGridError("grid function contains non-finite values")
        if self.dirichlet:
            boundary = values[~self.grid.interior_mask()]
            if np.any(boundary != 0.0):
                raise ValueError("Dirichlet grid function has nonzero boundary values")
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def zeros(cls, grid: SpatialGrid2D) -> "GridFunction":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(
        cls,
        grid: SpatialGrid2D,
        fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
        dirichlet: bool = True,
    ) -> "GridFunction":
        """
        Sample a function at the nodes

        With dirichlet set, boundary nodes are clamped to zero.
        """
        X, Y = grid.node_coordinates()
        values = np.broadcast_to(np.asarray(fn(X, Y), dtype=float), grid.shape).copy()
        if dirichlet:
            values[~grid.interior_mask()] = 0.0
        return cls(grid, values, dirichlet)

    @classmethod
    def from_interior(cls, grid: SpatialGrid2D, vector: np.ndarray) -> "GridFunction":
        values = np.zeros(grid.shape)
        values[1:-1, 1:-1] = np.asarray(vector).reshape(grid.nx - 2, grid.ny - 2)
        return cls(grid, values)

    def interior(self) -> np.ndarray:
        """Interior nodal values as a flat vector"""
        return self.values[1:-1, 1:-1].ravel()

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _check_same_grid(self, other)
        return GridFunction(self.grid, self.values + other.values, self.dirichlet and other.dirichlet)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _check_same_grid(self, other)
        return GridFunction(self.grid, self.values - other.values, self.dirichlet and other.dirichlet)

    def __mul__(self, scalar: float) -> "GridFunction":
        return GridFunction(self.grid, self.values * float(scalar), self.dirichlet)

    __rmul__ = __mul__

    def __neg__(self) -> "GridFunction":
        return self * -1.0


@dataclass(frozen=True, eq=False)
class CellField:
    """
    Values on the (nx-1) x (ny-1) cell-center lattice

    Scalar fields have shape (nx-1, ny-1); gradient fields carry a trailing
    axis of length 2 holding the x and y components.
    """

    grid: SpatialGrid2D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape[:2] != self.grid.cell_shape:
            raise ValueError(
                f"cell field shape {values.shape} does not match cells {self.grid.cell_shape}"
            )
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def constant(cls, grid: SpatialGrid2D, value: float) -> "CellField":
        return cls(grid, np.full(grid.cell_shape, float(value)))


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time nodes 0 = t_0 < ... < t_N = T"""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("time grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError(f"time grid must start at 0, got {nodes[0]}")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("time grid nodes must be strictly increasing")
        object.__setattr__(self, "nodes", _frozen(nodes))

    @classmethod
    def uniform(cls, T: float, h: float) -> "TimeGrid":
        """
        Constant steps of size h

        Raises:
            ValueError: If h does not divide T
        """
        if h <= 0.0 or T <= 0.0:
            raise ValueError(f"need T > 0 and h > 0, got T={T}, h={h}")
        n = int(round(T / h))
        if n < 1 or abs(n * h - T) > 1e-12 * max(1.0, T):
            raise ValueError(f"step size {h} does not divide T={T}")
        return cls(np.arange(n + 1, dtype=float) * h)

    @classmethod
    def from_nodes(cls, nodes) -> "TimeGrid":
        return cls(np.asarray(nodes, dtype=float))

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def h(self) -> float:
        return float(self.steps.max())

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def N(self) -> int:
        return self.nodes.size - 1


def _check_same_grid(u: GridFunction, v: GridFunction):
    if u.grid != v.grid:
        raise ValueError("grid functions live on different grids")


def inner_product(u: GridFunction, v: GridFunction) -> float:
    """Discrete L2 inner product over interior nodes"""
    _check_same_grid(u, v)
    return float(u.grid.cell_area * np.sum(u.values[1:-1, 1:-1] * v.values[1:-1, 1:-1]))


def h_norm(u: GridFunction) -> float:
    """
    Discrete L2(D) norm

    sqrt(hx * hy * sum of squared interior values); boundary nodes carry the
    homogeneous Dirichlet condition and are excluded.
    """
    interior = u.values[1:-1, 1:-1]
    return float(np.sqrt(u.grid.cell_area * np.sum(interior * interior)))


def cell_gradient(u: GridFunction) -> CellField:
    """
    Corner-averaged gradient at cell centers

    Exact for affine functions; equal to the bilinear-element gradient at the
    cell center.
    """
    grid = u.grid
    v = u.values
    dx = (v[1:, :-1] - v[:-1, :-1] + v[1:, 1:] - v[:-1, 1:]) / (2.0 * grid.hx)
    dy = (v[:-1, 1:] - v[:-1, :-1] + v[1:, 1:] - v[1:, :-1]) / (2.0 * grid.hy)
    return CellField(grid, np.stack([dx, dy], axis=-1))


def v_seminorm_p(u: GridFunction, weight: CellField, p: float) -> float:
    """
    Weighted gradient seminorm

    (sum_c hx * hy * weight_c * |G_c u|^p)^(1/p)

    Args:
        u: Nodal field
        weight: Nonnegative cell weights
        p: Exponent (>= 2)
    """
    if p < 2.0:
        raise ValueError(f"p must be >= 2, got {p}")
    if weight.grid != u.grid:
        raise ValueError("weight lives on a different grid")
    if np.any(weight.values < 0.0):
        raise ValueError("weight must be nonnegative")
    g = cell_gradient(u).values
    magnitude = np.hypot(g[..., 0], g[..., 1])
    total = u.grid.cell_area * np.sum(weight.values * magnitude ** p)
    return float(total ** (1.0 / p))


def restrict_to_coarse(u: GridFunction, factor: int) -> GridFunction:
    """
    Injection onto a coarser grid

    Coarse node (i, j) takes the value of fine node (factor*i, factor*j).
    """
    grid = u.grid
    if factor < 1 or (grid.nx - 1) % factor or (grid.ny - 1) % factor:
        raise ValueError(
            f"factor {factor} does not divide the cell counts {grid.cell_shape}"
        )
    coarse = coarsen_grid(grid, factor)
    return GridFunction(coarse, u.values[::factor, ::factor], u.dirichlet)


def coarsen_grid(grid: SpatialGrid2D, factor: int) -> SpatialGrid2D:
    if factor < 1 or (grid.nx - 1) % factor or (grid.ny - 1) % factor:
        raise ValueError(
            f"factor {factor} does not divide the cell counts {grid.cell_shape}"
        )
    return build_grid(
        (grid.nx - 1) // factor + 1,
        (grid.ny - 1) // factor + 1,
        (grid.ax, grid.bx, grid.ay, grid.by),
    )


def _cell_corners(grid: SpatialGrid2D):
    """Flat cell index and the four corner node indices of every cell"""
    nx, ny = grid.shape
    ci, cj = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="ij")
    cell = (ci * (ny - 1) + cj).ravel()
    n00 = (ci * ny + cj).ravel()
    n10 = ((ci + 1) * ny + cj).ravel()
    n01 = (ci * ny + cj + 1).ravel()
    n11 = ((ci + 1) * ny + cj + 1).ravel()
    return cell, n00, n10, n01, n11


@lru_cache(maxsize=32)
def gradient_matrices(grid: SpatialGrid2D) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """
    Sparse cell-gradient operators (Gx, Gy)

    Both have shape (num_cells, num_nodes) and reproduce cell_gradient on
    C-ordered nodal vectors.
    """
    cell, n00, n10, n01, n11 = _cell_corners(grid)
    rows = np.tile(cell, 4)
    cols = np.concatenate([n00, n10, n01, n11])
    sx = 1.0 / (2.0 * grid.hx)
    sy = 1.0 / (2.0 * grid.hy)
    ones = np.ones_like(cell, dtype=float)
    gx_data = np.concatenate([-sx * ones, sx * ones, -sx * ones, sx * ones])
    gy_data = np.concatenate([-sy * ones, -sy * ones, sy * ones, sy * ones])

    shape = (grid.num_cells, grid.num_nodes)
    Gx = sp.csr_matrix((gx_data, (rows, cols)), shape=shape)
    Gy = sp.csr_matrix((gy_data, (rows, cols)), shape=shape)
    return Gx, Gy


def _edge_difference(grid: SpatialGrid2D, cell, plus, minus, spacing: float) -> sp.csr_matrix:
    rows = np.concatenate([cell, cell])
    cols = np.concatenate([plus, minus])
    data = np.concatenate([np.ones(cell.size), -np.ones(cell.size)]) / spacing
    return sp.csr_matrix((data, (rows, cols)), shape=(grid.num_cells, grid.num_nodes))


@lru_cache(maxsize=32)
def quadrature_gradients(
    grid: SpatialGrid2D, stencil: Stencil = Stencil.CORNER
) -> Tuple[Tuple[float, sp.csr_matrix, sp.csr_matrix], ...]:
    """
    (weight, Gx, Gy) triples whose weighted cell energies make up J

    Weights sum to 1, and every pair is exact for affine functions.
    """
    stencil = Stencil(stencil)
    if stencil is Stencil.CORNER:
        Gx, Gy = gradient_matrices(grid)
        return ((1.0, Gx, Gy),)
    cell, n00, n10, n01, n11 = _cell_corners(grid)
    bottom = _edge_difference(grid, cell, n10, n00, grid.hx)
    top = _edge_difference(grid, cell, n11, n01, grid.hx)
    left = _edge_difference(grid, cell, n01, n00, grid.hy)
    right = _edge_difference(grid, cell, n11, n10, grid.hy)
    return tuple((0.25, dx, dy) for dx in (bottom, top) for dy in (left, right))


@lru_cache(maxsize=32)
def interior_selector(grid: SpatialGrid2D) -> sp.csr_matrix:
    """Sparse 0/1 matrix picking interior nodes from a C-ordered nodal vector"""
    flat = np.flatnonzero(grid.interior_mask().ravel())
    data = np.ones(flat.size)
    return sp.csr_matrix((data, (np.arange(flat.size), flat)), shape=(flat.size, grid.num_nodes))


def l2_distance(u: GridFunction, v: Optional[GridFunction] = None) -> float:
    """h_norm(u - v) without the Dirichlet check on the difference"""
    if v is None:
        return h_norm(u)
    _check_same_grid(u, v)
    diff = u.values[1:-1, 1:-1] - v.values[1:-1, 1:-1]
    return float(np.sqrt(u.grid.cell_area * np.sum(diff * diff)))
