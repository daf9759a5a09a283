"""Directional derivatives of the trajectory map with respect to the control.

The derivative along a direction ``du`` solves the linear nonhomogeneous
system

    dz/dt = A(t) z + B(t) du(t),   z(t0) = 0,

with ``A = df/dx`` and ``B = df/du`` evaluated along the nominal trajectory.
:func:`solve_variational` integrates this directly with the same trapezoid
stepping the fixed-point solver converges to, which makes it the exact
derivative of the discrete solution map; :func:`finite_difference_gateaux`
is the independent central-difference check.  The fundamental matrix route
(:func:`fundamental_matrix` plus :func:`variation_via_fundamental`) is kept
for validation of the variation-of-constants identity, not as the default
derivative path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError, GridMismatchError
from .function_space import (
    PIECEWISE_LINEAR,
    SampledFunction,
    TimeGrid,
)
from .state_operator import OdeSystem, _bin_endpoint_controls, picard_solve

VARIATIONAL_ODE = "variational-ode"
CLOSED_FORM = "closed-form"
FINITE_DIFFERENCE = "finite-difference"


@dataclass
class SensitivityResult:
    """Derivative trajectory ``delta_x`` with the method that produced it."""

    delta_x: SampledFunction
    method: str
    grid: TimeGrid


@dataclass
class FundamentalMatrix:
    """Matrix solution of ``dV/dt = A(t) V`` with ``V(t0) = I``.

    ``samples[k]`` is the matrix at edge ``t_k``; :meth:`at` interpolates
    linearly between edges.
    """

    grid: TimeGrid
    samples: np.ndarray

    def at(self, t: float) -> np.ndarray:
        g = self.grid
        pos = (float(t) - g.t0) / g.dt
        idx = int(np.clip(np.floor(pos), 0, g.n_bins - 1))
        frac = pos - idx
        return (1.0 - frac) * self.samples[idx] + frac * self.samples[idx + 1]


def _require_jacobians(sys: OdeSystem, need_control: bool = True):
    if sys.jac_x is None:
        raise CapabilityError("system provides no state Jacobian df/dx")
    if need_control and sys.jac_u is None:
        raise CapabilityError("system provides no control Jacobian df/du")


def _edge_jacobians(sys, x, u):
    """A and B at both endpoints of every bin, controls frozen per their kind."""
    edges = x.grid.edges
    u_left, u_right = _bin_endpoint_controls(u)
    n = x.grid.n_bins
    dim = sys.dim
    m = u.dim
    a_left = np.empty((n, dim, dim))
    a_right = np.empty((n, dim, dim))
    b_left = np.empty((n, dim, m)) if sys.jac_u is not None else None
    b_right = np.empty((n, dim, m)) if sys.jac_u is not None else None
    for k in range(n):
        a_left[k] = np.atleast_2d(sys.jac_x(x.values[:, k], u_left[:, k],
                                            float(edges[k])))
        a_right[k] = np.atleast_2d(sys.jac_x(x.values[:, k + 1], u_right[:, k],
                                             float(edges[k + 1])))
        if b_left is not None:
            b_left[k] = np.atleast_2d(sys.jac_u(x.values[:, k], u_left[:, k],
                                                float(edges[k])))
            b_right[k] = np.atleast_2d(sys.jac_u(x.values[:, k + 1],
                                                 u_right[:, k],
                                                 float(edges[k + 1])))
    return a_left, a_right, b_left, b_right


def solve_variational(sys: OdeSystem, x: SampledFunction, u: SampledFunction,
                      du: SampledFunction) -> SensitivityResult:
    """Integrate the linearized system along the nominal trajectory.

    ``x`` must be a converged trajectory for ``u``; ``du`` shares the
    control's grid and kind.  The trapezoid step is solved implicitly per
    bin, matching the discretization of the nonlinear solve so that the
    result is the exact derivative of the discrete trajectory map.
    """
    _require_jacobians(sys)
    if x.grid != u.grid or u.grid != du.grid or u.kind != du.kind \
            or u.dim != du.dim:
        raise GridMismatchError(
            "trajectory, control and direction must share the grid")
    a_left, a_right, b_left, b_right = _edge_jacobians(sys, x, u)
    du_left, du_right = _bin_endpoint_controls(du)
    h = x.grid.dt
    eye = np.eye(sys.dim)
    z = np.zeros((sys.dim, x.grid.n_bins + 1))
    for k in range(x.grid.n_bins):
        forcing = b_left[k] @ du_left[:, k] + b_right[k] @ du_right[:, k]
        rhs = z[:, k] + 0.5 * h * (a_left[k] @ z[:, k] + forcing)
        z[:, k + 1] = np.linalg.solve(eye - 0.5 * h * a_right[k], rhs)
    delta = SampledFunction(x.grid, z, PIECEWISE_LINEAR)
    return SensitivityResult(delta_x=delta, method=VARIATIONAL_ODE, grid=x.grid)


def fundamental_matrix(sys: OdeSystem, x: SampledFunction,
                       u: SampledFunction) -> FundamentalMatrix:
    """Column-wise solve of the homogeneous linearized system from identity."""
    _require_jacobians(sys, need_control=False)
    if x.grid != u.grid:
        raise GridMismatchError("trajectory and control must share the grid")
    a_left, a_right, _, _ = _edge_jacobians(sys, x, u)
    h = x.grid.dt
    eye = np.eye(sys.dim)
    samples = np.empty((x.grid.n_bins + 1, sys.dim, sys.dim))
    samples[0] = eye
    for k in range(x.grid.n_bins):
        rhs = (eye + 0.5 * h * a_left[k]) @ samples[k]
        samples[k + 1] = np.linalg.solve(eye - 0.5 * h * a_right[k], rhs)
    return FundamentalMatrix(grid=x.grid, samples=samples)


def variation_via_fundamental(fund: FundamentalMatrix, sys: OdeSystem,
                              x: SampledFunction, u: SampledFunction,
                              du: SampledFunction) -> SensitivityResult:
    """Assemble the derivative by variation of constants,

        delta_x(t) = M(t) * int_{t0}^t M(s)^{-1} B(s) du(s) ds.

    Validation route for :func:`solve_variational`; it costs per-bin linear
    solves against M and is never needed by the equilibrium solver.
    """
    _require_jacobians(sys)
    _, _, b_left, b_right = _edge_jacobians(sys, x, u)
    du_left, du_right = _bin_endpoint_controls(du)
    h = x.grid.dt
    n = x.grid.n_bins
    acc = np.zeros(sys.dim)
    z = np.zeros((sys.dim, n + 1))
    for k in range(n):
        w_left = np.linalg.solve(fund.samples[k], b_left[k] @ du_left[:, k])
        w_right = np.linalg.solve(fund.samples[k + 1],
                                  b_right[k] @ du_right[:, k])
        acc = acc + 0.5 * h * (w_left + w_right)
        z[:, k + 1] = fund.samples[k + 1] @ acc
    delta = SampledFunction(x.grid, z, PIECEWISE_LINEAR)
    return SensitivityResult(delta_x=delta, method=CLOSED_FORM, grid=x.grid)


def finite_difference_gateaux(sys: OdeSystem, x0, u: SampledFunction,
                              du: SampledFunction, eps: float,
                              tol: float = 1e-12,
                              max_iter: int = 400) -> SensitivityResult:
    """Central difference ``(x(u + eps du) - x(u - eps du)) / (2 eps)``.

    The independent oracle for :func:`solve_variational`: it only uses the
    nonlinear solver.  ``eps`` should keep ``u +- eps du`` inside the
    declared control box; excursions are flagged by the solver, not
    rejected.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    plus = picard_solve(sys, x0, u + eps * du, tol=tol,
                        max_iter=max_iter).trajectory
    minus = picard_solve(sys, x0, u + (-eps) * du, tol=tol,
                         max_iter=max_iter).trajectory
    delta = (plus - minus) * (0.5 / eps)
    return SensitivityResult(delta_x=delta, method=FINITE_DIFFERENCE,
                             grid=u.grid)
