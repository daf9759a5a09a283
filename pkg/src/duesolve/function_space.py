"""Uniform time grids, sampled functions, and the norms built on them.

Controls are stored piecewise-constant (one value per bin) and state
trajectories piecewise-linear (one value per bin edge).  Integrals use a
left-Riemann sum on piecewise-constant data, which is exact for that
representation, and the trapezoid rule on piecewise-linear data.  The
exponentially weighted norm ``max |x(t)| e^(-alpha t)`` is the workhorse
of the fixed-point solver's convergence certificates.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import GridMismatchError

PIECEWISE_CONSTANT = "piecewise-constant"
PIECEWISE_LINEAR = "piecewise-linear"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform discretization of [t0, tf] into ``n_bins`` bins."""

    t0: float
    tf: float
    n_bins: int

    def __post_init__(self):
        if not (np.isfinite(self.t0) and np.isfinite(self.tf)):
            raise ValueError("grid endpoints must be finite")
        if self.tf <= self.t0:
            raise ValueError(f"tf must exceed t0 (got t0={self.t0}, tf={self.tf})")
        if self.n_bins < 1:
            raise ValueError(f"n_bins must be at least 1 (got {self.n_bins})")

    @property
    def dt(self) -> float:
        return (self.tf - self.t0) / self.n_bins

    @cached_property
    def edges(self) -> np.ndarray:
        e = np.linspace(self.t0, self.tf, self.n_bins + 1)
        e.setflags(write=False)
        return e

    @property
    def bin_left_edges(self) -> np.ndarray:
        return self.edges[:-1]

    @property
    def bin_midpoints(self) -> np.ndarray:
        return self.edges[:-1] + 0.5 * self.dt


class SampledFunction:
    """Vector-valued function of time, sampled on a :class:`TimeGrid`.

    Two sampling kinds are supported:

    * ``PIECEWISE_CONSTANT`` -- ``values[:, k]`` holds on ``[t_k, t_{k+1})``;
      shape is ``(dim, n_bins)``.  Used for controls and flows.
    * ``PIECEWISE_LINEAR`` -- ``values[:, k]`` is the sample at edge ``t_k``;
      shape is ``(dim, n_bins + 1)``.  Used for trajectories.

    Instances are immutable: the sample array is copied and write-locked.
    """

    __slots__ = ("grid", "values", "kind", "nonnegative")

    def __init__(self, grid: TimeGrid, values, kind: str, nonnegative: bool = False):
        if kind not in (PIECEWISE_CONSTANT, PIECEWISE_LINEAR):
            raise ValueError(f"unknown sampling kind {kind!r}")
        values = np.atleast_2d(np.asarray(values, dtype=float))
        expected = grid.n_bins if kind == PIECEWISE_CONSTANT else grid.n_bins + 1
        if values.ndim != 2 or values.shape[1] != expected:
            raise GridMismatchError(
                f"{kind} function on {grid.n_bins} bins needs {expected} samples "
                f"per component, got array of shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("samples must be finite")
        if nonnegative and np.any(values < 0.0):
            raise ValueError("flow samples must be nonnegative")
        values = values.copy()
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.kind = kind
        self.nonnegative = nonnegative

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def sample_times(self) -> np.ndarray:
        """Times the samples refer to (bin left edges for piecewise-constant)."""
        if self.kind == PIECEWISE_CONSTANT:
            return self.grid.bin_left_edges
        return self.grid.edges

    @classmethod
    def constant(cls, grid: TimeGrid, value, kind: str = PIECEWISE_LINEAR,
                 nonnegative: bool = False) -> "SampledFunction":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        n = grid.n_bins if kind == PIECEWISE_CONSTANT else grid.n_bins + 1
        return cls(grid, np.tile(value[:, None], (1, n)), kind, nonnegative)

    @classmethod
    def from_callable(cls, grid: TimeGrid, fn: Callable, kind: str,
                      nonnegative: bool = False) -> "SampledFunction":
        """Sample ``fn(t)`` on the grid.

        Piecewise-constant functions are sampled at bin midpoints, which keeps
        the left-Riemann integral of the representation exact for affine
        ``fn``; piecewise-linear functions are sampled at the edges.
        """
        ts = grid.bin_midpoints if kind == PIECEWISE_CONSTANT else grid.edges
        cols = [np.atleast_1d(np.asarray(fn(float(t)), dtype=float)) for t in ts]
        return cls(grid, np.stack(cols, axis=1), kind, nonnegative)

    def evaluate(self, t) -> np.ndarray:
        """Value at time(s) ``t`` per the sampling kind (right-closed at tf)."""
        t = np.asarray(t, dtype=float)
        g = self.grid
        if self.kind == PIECEWISE_CONSTANT:
            idx = np.clip(((t - g.t0) / g.dt).astype(int), 0, g.n_bins - 1)
            return self.values[:, idx]
        return np.stack([np.interp(t, g.edges, row) for row in self.values])

    def _compatible(self, other: "SampledFunction") -> None:
        if self.grid != other.grid or self.kind != other.kind \
                or self.dim != other.dim:
            raise GridMismatchError(
                "operands must share grid, sampling kind and dimension"
            )

    def __add__(self, other):
        self._compatible(other)
        return SampledFunction(self.grid, self.values + other.values, self.kind)

    def __sub__(self, other):
        self._compatible(other)
        return SampledFunction(self.grid, self.values - other.values, self.kind)

    def __mul__(self, scalar):
        return SampledFunction(self.grid, self.values * float(scalar), self.kind)

    __rmul__ = __mul__

    def __neg__(self):
        return SampledFunction(self.grid, -self.values, self.kind)

    def __repr__(self):
        return (f"SampledFunction(dim={self.dim}, kind={self.kind!r}, "
                f"grid=[{self.grid.t0}, {self.grid.tf}] x {self.grid.n_bins})")


def inner_product(u: SampledFunction, v: SampledFunction) -> float:
    """Discretized L2 inner product ``int u(t)' v(t) dt``.

    Left-Riemann on piecewise-constant pairs (exact for the representation),
    trapezoid on piecewise-linear pairs.  Raises :class:`GridMismatchError`
    when grids, dimensions or sampling kinds differ.
    """
    u._compatible(v)
    w = np.einsum("ij,ij->j", u.values, v.values)
    dt = u.grid.dt
    if u.kind == PIECEWISE_CONSTANT:
        return float(dt * w.sum())
    return float(dt * (0.5 * w[0] + w[1:-1].sum() + 0.5 * w[-1]))


def l2_norm(u: SampledFunction) -> float:
    return float(np.sqrt(max(inner_product(u, u), 0.0)))


def sup_norm(x: SampledFunction) -> float:
    """Max over samples of the Euclidean norm of the value vector."""
    return float(np.linalg.norm(x.values, axis=0).max())


def weighted_norm(x: SampledFunction, alpha: float) -> float:
    """``max |x(t)| e^(-alpha t)`` over the sample times; requires alpha > 0."""
    if alpha <= 0.0:
        raise ValueError(f"alpha must be positive (got {alpha})")
    mags = np.linalg.norm(x.values, axis=0)
    return float((mags * np.exp(-alpha * x.sample_times)).max())


def cumulative_integral(u: SampledFunction) -> SampledFunction:
    """Antiderivative ``t -> int_{t0}^t u(s) ds`` as a piecewise-linear function.

    Exact for piecewise-constant input; trapezoid rule for piecewise-linear.
    """
    dt = u.grid.dt
    if u.kind == PIECEWISE_CONSTANT:
        incr = u.values * dt
    else:
        incr = 0.5 * dt * (u.values[:, :-1] + u.values[:, 1:])
    out = np.zeros((u.dim, u.grid.n_bins + 1))
    np.cumsum(incr, axis=1, out=out[:, 1:])
    return SampledFunction(u.grid, out, PIECEWISE_LINEAR)
