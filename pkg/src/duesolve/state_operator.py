"""ODE trajectories as a fixed point of the integral map, with certificates.

Given dynamics ``dx/dt = f(x, u, t)``, ``x(t0) = x0``, the trajectory is the
fixed point of the map

    Phi(u, x)(t) = x0 + int_{t0}^t f(x(s), u(s), s) ds.

When ``|df/dx| <= L``, Phi contracts with constant 1/2 in the exponentially
weighted norm with weight ``alpha = 2 L``, so successive substitution
converges geometrically and the distance to the fixed point is certified by

    ||y - x*||_alpha <= ||y - Phi(u, y)||_alpha / (1 - kappa).

The solver iterates whole trajectories (not single steps): each sweep applies
Phi via per-bin trapezoid quadrature, holding piecewise-constant controls
frozen over their bin.  The converged limit therefore satisfies the
trapezoidal (Crank-Nicolson) discretization edge by edge, so the quadrature
error is the familiar O(dt^2) while the fixed-point error is controlled
separately by the contraction certificate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    ControlBoxWarning,
    DivergedError,
    GridMismatchError,
    NoConvergenceError,
)
from .function_space import (
    PIECEWISE_CONSTANT,
    PIECEWISE_LINEAR,
    SampledFunction,
    TimeGrid,
    sup_norm,
    weighted_norm,
)


@dataclass
class OdeSystem:
    """Right-hand side ``f(x, u, t)`` with its declared operating bounds.

    ``rhs_bound`` is the declared sup of ``|f|`` and ``lipschitz_bound`` the
    declared sup of the state-Jacobian norm over the operating region; both
    are the caller's contract, trusted by the solver (see
    :func:`probe_declared_bounds` for a spot check).  ``jac_x`` / ``jac_u``
    are optional analytic Jacobians with the same ``(x, u, t)`` signature.
    ``control_box`` optionally bounds admissible control values as a
    ``(lower, upper)`` pair of arrays; either side may be None.
    Set ``vectorized`` when the callbacks accept stacked arguments of shape
    ``(dim, k)`` / ``(m, k)`` / ``(k,)`` and return stacked results.
    """

    dim: int
    rhs: Callable
    rhs_bound: float
    lipschitz_bound: float = 0.0
    jac_x: Optional[Callable] = None
    jac_u: Optional[Callable] = None
    control_box: Optional[tuple] = None
    vectorized: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("state dimension must be positive")
        if not self.rhs_bound > 0.0:
            raise ValueError("declared rhs bound must be positive")
        if self.lipschitz_bound < 0.0:
            raise ValueError("declared Lipschitz bound must be nonnegative")


@dataclass
class TerminalCondition:
    """Endpoint residual map ``Gamma(x, t)`` with a feasibility tolerance."""

    residual: Callable
    tolerance: float = 1e-6

    @classmethod
    def affine_target(cls, target, tolerance: float = 1e-6) -> "TerminalCondition":
        """``Gamma(x, t) = x - target`` for a fixed target vector."""
        target = np.atleast_1d(np.asarray(target, dtype=float))
        return cls(residual=lambda x, t: np.asarray(x) - target,
                   tolerance=tolerance)


@dataclass
class PicardReport:
    """Outcome of a fixed-point solve.

    ``deltas`` holds the weighted-norm distance between successive iterates;
    ``residual`` is the measured ``||x - Phi(u, x)||_alpha`` of the returned
    trajectory and ``bound`` the certified distance ``residual / (1-kappa)``.
    ``quadrature_error_estimate`` is a rough trapezoid-error estimate from
    second differences of the integrand along the solution; it is separate
    from (and not covered by) the fixed-point certificate.
    """

    trajectory: SampledFunction
    iterations: int
    alpha: float
    kappa: float
    deltas: list = field(default_factory=list)
    residual: float = 0.0
    bound: float = 0.0
    quadrature_error_estimate: float = 0.0


def _bin_endpoint_controls(u: SampledFunction):
    """Control values at each bin's two endpoints, per sampling kind."""
    if u.kind == PIECEWISE_CONSTANT:
        return u.values, u.values
    return u.values[:, :-1], u.values[:, 1:]


def _eval_rhs(sys: OdeSystem, xs: np.ndarray, us: np.ndarray,
              ts: np.ndarray) -> np.ndarray:
    """Evaluate f column-wise on stacked samples; shapes (n,k),(m,k),(k,)."""
    if sys.vectorized:
        out = np.asarray(sys.rhs(xs, us, ts), dtype=float)
        out = out.reshape(sys.dim, -1)
    else:
        out = np.empty((sys.dim, xs.shape[1]))
        for k in range(xs.shape[1]):
            out[:, k] = np.asarray(sys.rhs(xs[:, k], us[:, k], float(ts[k])),
                                   dtype=float)
    if not np.all(np.isfinite(out)):
        bad = int(np.argwhere(~np.isfinite(out))[0, 1])
        raise DivergedError(
            f"dynamics returned a non-finite value near t={ts[bad]:.6g}"
        )
    return out


def _picard_sweep(sys, x0, u, x):
    """One application of Phi; returns the new trajectory and integrand samples."""
    grid = x.grid
    edges = grid.edges
    u_left, u_right = _bin_endpoint_controls(u)
    g_left = _eval_rhs(sys, x.values[:, :-1], u_left, edges[:-1])
    g_right = _eval_rhs(sys, x.values[:, 1:], u_right, edges[1:])
    incr = 0.5 * grid.dt * (g_left + g_right)
    out = np.empty_like(x.values)
    out[:, 0] = x0
    np.cumsum(incr, axis=1, out=out[:, 1:])
    out[:, 1:] += x0[:, None]
    return SampledFunction(grid, out, PIECEWISE_LINEAR), g_left, g_right


def apply_picard_map(sys: OdeSystem, x0, u: SampledFunction,
                     x: SampledFunction) -> SampledFunction:
    """``t -> x0 + int_{t0}^t f(x(s), u(s), s) ds`` on the shared grid."""
    if x.grid != u.grid:
        raise GridMismatchError("trajectory and control must share the grid")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    result, _, _ = _picard_sweep(sys, x0, u, x)
    return result


def _check_control_box(sys: OdeSystem, u: SampledFunction) -> None:
    # Excursions are flagged, not rejected: the dynamics must be evaluable on
    # a slightly inflated box anyway for difference quotients.
    if sys.control_box is None:
        return
    lower, upper = sys.control_box
    if lower is not None:
        lo = np.asarray(lower, dtype=float)
        slack = 1e-9 + 1e-6 * np.maximum(np.abs(lo), 1.0)
        if np.any(u.values < (lo - slack)[:, None]):
            warnings.warn("control exits its declared value box from below",
                          ControlBoxWarning, stacklevel=3)
    if upper is not None:
        hi = np.asarray(upper, dtype=float)
        slack = 1e-9 + 1e-6 * np.maximum(np.abs(hi), 1.0)
        if np.any(u.values > (hi + slack)[:, None]):
            warnings.warn("control exits its declared value box from above",
                          ControlBoxWarning, stacklevel=3)


def _quadrature_estimate(grid: TimeGrid, g_left, g_right):
    # Trapezoid error ~ (tf-t0)/12 * dt^2 * max|g''|; estimate g'' by second
    # differences of the integrand sampled along the solution.
    g = np.concatenate([g_left, g_right[:, -1:]], axis=1)
    if g.shape[1] < 3:
        return 0.0
    second = g[:, 2:] - 2.0 * g[:, 1:-1] + g[:, :-2]
    mags = np.linalg.norm(second, axis=0)
    return float((grid.tf - grid.t0) / 12.0 * mags.max())


def picard_solve(sys: OdeSystem, x0, u: SampledFunction,
                 grid: Optional[TimeGrid] = None, tol: float = 1e-8,
                 max_iter: int = 200,
                 initial: Optional[SampledFunction] = None) -> PicardReport:
    """Solve ``dx/dt = f(x, u, t)``, ``x(t0) = x0`` by successive substitution.

    Parameters
    ----------
    sys : OdeSystem
        Dynamics with declared bounds.  With ``lipschitz_bound = L > 0`` the
        weight is ``alpha = 2 L`` and the contraction constant ``kappa = 1/2``;
        with ``L = 0`` the map is the plain integral (``alpha = 1``,
        ``kappa = 0``) and a single application is exact up to quadrature.
    x0 : array_like
        Initial state.
    u : SampledFunction
        Control on the solve grid.
    tol : float
        Target certified distance to the fixed point in the weighted norm:
        the returned trajectory satisfies
        ``||x - Phi(u, x)||_alpha <= tol * (1 - kappa)``.
    initial : SampledFunction, optional
        Starting iterate; defaults to the constant function ``x0``, which
        makes the first a-posteriori bound immediately available.

    Raises
    ------
    DivergedError
        The dynamics produced non-finite values.
    NoConvergenceError
        Iteration cap hit; the exception carries the last certified bound.
    """
    if grid is None:
        grid = u.grid
    elif grid != u.grid:
        raise GridMismatchError("explicit grid disagrees with the control's")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (sys.dim,):
        raise ValueError(f"x0 must have shape ({sys.dim},)")
    _check_control_box(sys, u)

    lipschitz = sys.lipschitz_bound
    if lipschitz > 0.0:
        alpha, kappa = 2.0 * lipschitz, 0.5
    else:
        alpha, kappa = 1.0, 0.0
    target = tol * (1.0 - kappa)

    x = initial if initial is not None else SampledFunction.constant(
        grid, x0, PIECEWISE_LINEAR)
    if x.grid != grid or x.dim != sys.dim or x.kind != PIECEWISE_LINEAR:
        raise GridMismatchError("initial iterate incompatible with the solve")

    deltas = []
    iterations = 0
    converged = False
    if lipschitz == 0.0:
        # Control-only dynamics: one application lands on the fixed point.
        x_new, _, _ = _picard_sweep(sys, x0, u, x)
        deltas.append(weighted_norm(x_new - x, alpha))
        x = x_new
        iterations = 1
        converged = True
    else:
        for iterations in range(1, max_iter + 1):
            x_new, _, _ = _picard_sweep(sys, x0, u, x)
            delta = weighted_norm(x_new - x, alpha)
            if not np.isfinite(delta):
                raise DivergedError("fixed-point iteration diverged")
            deltas.append(delta)
            x = x_new
            if delta <= target:
                converged = True
                break
    if not converged:
        last_bound = deltas[-1] / (1.0 - kappa)
        raise NoConvergenceError(
            f"no convergence after {max_iter} iterations "
            f"(certified bound {last_bound:.3e} > tol {tol:.3e})",
            bound=last_bound, iterations=max_iter)

    # Certify the returned trajectory with one further sweep.
    x_check, g_left, g_right = _picard_sweep(sys, x0, u, x)
    residual = weighted_norm(x_check - x, alpha)
    return PicardReport(
        trajectory=x,
        iterations=iterations,
        alpha=alpha,
        kappa=kappa,
        deltas=deltas,
        residual=residual,
        bound=residual / (1.0 - kappa),
        quadrature_error_estimate=_quadrature_estimate(grid, g_left, g_right),
    )


def aposteriori_bound(kappa: float, residual: float) -> float:
    """Certified distance to the fixed point: ``residual / (1 - kappa)``."""
    if not 0.0 <= kappa < 1.0:
        raise ValueError(f"kappa must lie in [0, 1) (got {kappa})")
    if residual < 0.0:
        raise ValueError("residual must be nonnegative")
    return residual / (1.0 - kappa)


def terminal_residual(gamma: TerminalCondition,
                      traj: SampledFunction) -> np.ndarray:
    """``Gamma(x(tf), tf)``; feasibility against the tolerance is the caller's call."""
    return np.atleast_1d(np.asarray(
        gamma.residual(traj.values[:, -1], traj.grid.tf), dtype=float))


def continuity_probe(sys: OdeSystem, x0, u: SampledFunction,
                     du: SampledFunction, epsilons,
                     tol: float = 1e-10) -> list:
    """Sup-norm deviation of the trajectory under ``u + eps * du`` per eps.

    ``epsilons`` must be positive and strictly decreasing; the returned list
    of ``(eps, deviation)`` pairs should shrink to zero with eps when the
    trajectory map is continuous in the control.
    """
    epsilons = [float(e) for e in epsilons]
    if any(e <= 0.0 for e in epsilons):
        raise ValueError("epsilons must be positive")
    if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise ValueError("epsilons must be strictly decreasing")
    base = picard_solve(sys, x0, u, tol=tol).trajectory
    out = []
    for eps in epsilons:
        perturbed = picard_solve(sys, x0, u + eps * du, tol=tol).trajectory
        out.append((eps, sup_norm(perturbed - base)))
    return out


def probe_declared_bounds(sys: OdeSystem, state_lower, state_upper,
                          times, points_per_axis: int = 5) -> dict:
    """Sample ``|f|`` and ``|df/dx|`` on a lattice and compare with the declaration.

    Returns the measured sups; emits a warning when either declared bound is
    exceeded.  Intended as a diagnostic, not a proof: the declaration remains
    the caller's contract.
    """
    state_lower = np.atleast_1d(np.asarray(state_lower, dtype=float))
    state_upper = np.atleast_1d(np.asarray(state_upper, dtype=float))
    axes = [np.linspace(lo, hi, points_per_axis)
            for lo, hi in zip(state_lower, state_upper)]
    states = np.stack([g.ravel() for g in np.meshgrid(*axes)], axis=0)
    if sys.control_box is not None and sys.control_box[0] is not None \
            and sys.control_box[1] is not None:
        lo, hi = (np.asarray(side, dtype=float) for side in sys.control_box)
        ctl_axes = [np.linspace(a, b, points_per_axis) for a, b in zip(lo, hi)]
        controls = np.stack([g.ravel() for g in np.meshgrid(*ctl_axes)], axis=0)
    else:
        controls = np.zeros((1, 1))
    max_f = 0.0
    max_jac = 0.0
    for t in np.atleast_1d(np.asarray(times, dtype=float)):
        for j in range(states.shape[1]):
            xs = states[:, j]
            for k in range(controls.shape[1]):
                us = controls[:, k]
                max_f = max(max_f, float(np.linalg.norm(
                    np.atleast_1d(sys.rhs(xs, us, float(t))))))
                if sys.jac_x is not None:
                    max_jac = max(max_jac, float(np.linalg.norm(
                        np.atleast_2d(sys.jac_x(xs, us, float(t))), ord=2)))
    if max_f > sys.rhs_bound:
        warnings.warn(
            f"measured sup|f| = {max_f:.3g} exceeds declared bound "
            f"{sys.rhs_bound:.3g}", stacklevel=2)
    if sys.jac_x is not None and max_jac > sys.lipschitz_bound:
        warnings.warn(
            f"measured sup|df/dx| = {max_jac:.3g} exceeds declared bound "
            f"{sys.lipschitz_bound:.3g}", stacklevel=2)
    return {"measured_rhs_bound": max_f, "measured_lipschitz_bound": max_jac}
