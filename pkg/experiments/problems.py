"""
Manufactured solutions on [-1,1]^2
Rotating p=4 pulse and rotating linear Gaussian, with their sources
"""

from functools import partial
from typing import Literal, Optional, Tuple
import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from discretization.grid import GridFunction, SpatialGrid2D, Stencil
from discretization.operators import BatchOperator, ProblemSpec

logger = logging.getLogger(__name__)

# Pulse: [0.03 - c (x^2 + y^2)^(4/3)]_+^(3/4)
PULSE_LEVEL = 0.03
PULSE_C = 10.0 ** 0.375 / 4.0

# Gaussian: exp(-100 |x - center|^2)
GAUSSIAN_RATE = 100.0


class ManufacturedProblem(BaseModel):
    """
    Closed-form test problem

    The kind fixes the exponent, the diffusion coefficient and the final time:
    plaplace_pulse has p = 4, alpha = 1; linear_gaussian has p = 2, alpha = 0.1;
    both run to T = 1. The profile rotates around the origin with radius r.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["plaplace_pulse", "linear_gaussian"] = Field(
        default="linear_gaussian", description="Test problem"
    )
    r: float = Field(default=0.5, ge=0.0, lt=1.0, description="Rotation radius")
    source_mode: Literal["analytic", "discrete"] = Field(
        default="discrete", description="Closed-form or semi-discrete source"
    )

    @model_validator(mode="after")
    def _check_source_mode(self):
        if self.kind == "plaplace_pulse" and self.source_mode == "analytic":
            raise ValueError("analytic source is only available for linear_gaussian; use discrete mode")
        return self

    @property
    def p(self) -> float:
        return 4.0 if self.kind == "plaplace_pulse" else 2.0

    @property
    def alpha(self) -> float:
        return 1.0 if self.kind == "plaplace_pulse" else 0.1

    @property
    def T(self) -> float:
        return 1.0

    def alpha_at(self, t: float) -> float:
        return self.alpha

    def center(self, t: float) -> Tuple[float, float]:
        angle = 2.0 * np.pi * t
        return self.r * np.cos(angle), self.r * np.sin(angle)


def _shifted(problem: ManufacturedProblem, t: float, X: np.ndarray, Y: np.ndarray):
    cx, cy = problem.center(t)
    return X - cx, Y - cy


def _pulse(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    q = X * X + Y * Y
    g = PULSE_LEVEL - PULSE_C * q ** (4.0 / 3.0)
    return np.where(g > 0.0, np.maximum(g, 0.0) ** 0.75, 0.0)


def _pulse_gradient(X: np.ndarray, Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """d/dx = -2 c x q^(1/3) g^(-1/4) inside the support, 0 outside"""
    q = X * X + Y * Y
    g = PULSE_LEVEL - PULSE_C * q ** (4.0 / 3.0)
    inside = g > 0.0
    factor = np.zeros_like(q)
    factor[inside] = -2.0 * PULSE_C * q[inside] ** (1.0 / 3.0) * g[inside] ** -0.25
    return factor * X, factor * Y


def _gaussian(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return np.exp(-GAUSSIAN_RATE * (X * X + Y * Y))


def _gaussian_gradient(X: np.ndarray, Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    u = _gaussian(X, Y)
    return -2.0 * GAUSSIAN_RATE * X * u, -2.0 * GAUSSIAN_RATE * Y * u


def _gaussian_laplacian(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    rate = GAUSSIAN_RATE
    return (-4.0 * rate + 4.0 * rate * rate * (X * X + Y * Y)) * _gaussian(X, Y)


def exact_solution(problem: ManufacturedProblem, t: float, grid: SpatialGrid2D) -> GridFunction:
    """
    Exact solution sampled at the nodes

    Boundary nodes are clamped to 0; the Gaussian is below 1.4e-11 there and
    the pulse support stays inside the domain for r = 0.5.
    """
    profile = _pulse if problem.kind == "plaplace_pulse" else _gaussian
    return GridFunction.from_function(grid, lambda X, Y: profile(*_shifted(problem, t, X, Y)))


def time_derivative(problem: ManufacturedProblem, t: float, grid: SpatialGrid2D) -> GridFunction:
    """du/dt = 2 pi r (sin(2 pi t) d_x u~ - cos(2 pi t) d_y u~) at shifted coordinates"""
    gradient = _pulse_gradient if problem.kind == "plaplace_pulse" else _gaussian_gradient
    angle = 2.0 * np.pi * t
    speed = 2.0 * np.pi * problem.r

    def dt(X, Y):
        gx, gy = gradient(*_shifted(problem, t, X, Y))
        return speed * (np.sin(angle) * gx - np.cos(angle) * gy)

    return GridFunction.from_function(grid, dt)


def source_term(
    problem: ManufacturedProblem,
    t: float,
    grid: SpatialGrid2D,
    mode: Optional[str] = None,
    stencil: Stencil = Stencil.CORNER,
) -> GridFunction:
    """
    Right-hand side making the manufactured solution exact

    Args:
        problem: Test problem
        t: Time
        grid: Grid to sample on
        mode: "analytic" for du/dt - alpha * Laplacian(u) in closed form
            (linear_gaussian only), "discrete" for du/dt + A_h(t) u_h(t) so
            that the sampled solution solves the semi-discrete system exactly.
            Defaults to problem.source_mode.
        stencil: Gradient stencil of A_h in discrete mode

    Raises:
        ValueError: Analytic mode for the pulse
    """
    mode = mode or problem.source_mode
    dt_u = time_derivative(problem, t, grid)
    if mode == "discrete":
        op = BatchOperator.full(grid, problem.p, problem.alpha_at(t), t, stencil)
        return dt_u + op.apply_operator(exact_solution(problem, t, grid))
    if mode != "analytic":
        raise ValueError(f"unknown source mode: {mode}")
    if problem.kind == "plaplace_pulse":
        raise ValueError("analytic source is only available for linear_gaussian; use discrete mode")

    laplacian = GridFunction.from_function(
        grid, lambda X, Y: _gaussian_laplacian(*_shifted(problem, t, X, Y))
    )
    return dt_u - problem.alpha_at(t) * laplacian


def to_problem_spec(
    problem: ManufacturedProblem, grid: SpatialGrid2D, stencil: Stencil = Stencil.CORNER
) -> ProblemSpec:
    """Solver-facing problem with u0 = exact solution at t = 0"""
    return ProblemSpec(
        p=problem.p,
        alpha=problem.alpha_at,
        T=problem.T,
        u0=exact_solution(problem, 0.0, grid),
        source=partial(source_term, problem, stencil=stencil),
        stencil=stencil,
    )
