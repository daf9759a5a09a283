"""Path travel delays and effective (schedule-penalized) delays.

Two built-in producers of the per-path delay field are shipped:

* ``whole-link`` -- the dynamic model.  Each link carries a volume
  ``x_l`` driven by its in/outflows from zero, a unit of flow entering link
  ``l`` at time ``t`` exits at ``tau_l(t) = t + a_l + b_l x_l(t)``, and flow
  propagates first-in-first-out: cumulative exits at ``tau_l(t)`` equal
  cumulative entries at ``t``.  Path delay nests the link exit maps along
  the path.  Departures after the horizon cannot exist (flows live on the
  grid); arrivals past the horizon are handled by freezing link volumes at
  their final value and flagging the affected samples.

* ``instantaneous`` -- a static surrogate.  Link volumes are computed from
  free-flow propagation only (a unit entering link ``l`` occupies it for
  exactly ``a_l``), and the path delay reads all of its link volumes at the
  departure instant: ``D_p(t) = sum_l (a_l + b_l x_l(t))``.  The map from
  flows to delays is linear, which makes brute-force equilibria of small
  instances cheap to verify.

Any callable ``(spec, flows) -> DelayField`` plugs in as an alternative
model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DelayModelError, FifoViolationError, GridMismatchError
from .function_space import (
    PIECEWISE_CONSTANT,
    SampledFunction,
    TimeGrid,
)
from .network import NetworkSpec, OdPair, Path

WHOLE_LINK = "whole-link"
INSTANTANEOUS = "instantaneous"


class PathFlowProfile:
    """Per-path departure rates, piecewise-constant and nonnegative."""

    __slots__ = ("grid", "values", "path_ids")

    def __init__(self, grid: TimeGrid, values, path_ids):
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.shape != (len(path_ids), grid.n_bins):
            raise GridMismatchError(
                f"flow array must have shape ({len(path_ids)}, {grid.n_bins}),"
                f" got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("flow samples must be finite")
        if np.any(values < 0.0):
            raise ValueError("departure rates must be nonnegative")
        values = values.copy()
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.path_ids = tuple(path_ids)

    @property
    def n_paths(self) -> int:
        return len(self.path_ids)

    def as_sampled(self) -> SampledFunction:
        return SampledFunction(self.grid, self.values, PIECEWISE_CONSTANT,
                               nonnegative=True)

    def path_row(self, path_id) -> np.ndarray:
        return self.values[self.path_ids.index(path_id)]


@dataclass(frozen=True)
class ArrivalPenalty:
    """Schedule penalty for arriving off the target time.

    ``piecewise-linear`` charges ``early_weight`` per unit of earliness and
    ``late_weight`` per unit of lateness; ``quadratic`` charges
    ``curvature * w^2`` for an arrival offset ``w``.
    """

    kind: str
    early_weight: float = 0.0
    late_weight: float = 0.0
    curvature: float = 0.0

    def __post_init__(self):
        if self.kind not in ("piecewise-linear", "quadratic"):
            raise ValueError(f"unknown penalty kind {self.kind!r}")
        if min(self.early_weight, self.late_weight, self.curvature) < 0.0:
            raise ValueError("penalty weights must be nonnegative")

    @classmethod
    def piecewise_linear(cls, early_weight, late_weight) -> "ArrivalPenalty":
        return cls(kind="piecewise-linear", early_weight=float(early_weight),
                   late_weight=float(late_weight))

    @classmethod
    def quadratic(cls, curvature) -> "ArrivalPenalty":
        return cls(kind="quadratic", curvature=float(curvature))

    @classmethod
    def none(cls) -> "ArrivalPenalty":
        return cls.piecewise_linear(0.0, 0.0)

    def __call__(self, offset):
        offset = np.asarray(offset, dtype=float)
        if self.kind == "quadratic":
            return self.curvature * offset * offset
        return (self.early_weight * np.maximum(-offset, 0.0)
                + self.late_weight * np.maximum(offset, 0.0))


@dataclass
class DelayField:
    """Per-path delays plus the link state that produced them.

    ``delays[p, k]`` is the travel delay of a unit departing path ``p`` at
    edge ``t_k``; ``volumes[l, k]`` the vehicles on link ``l``;
    ``exit_times[l, k]`` the link exit-time map at the edges (None for
    models without flow propagation).  ``extrapolated`` marks delay samples
    whose evaluation ran past the horizon on frozen volumes.
    """

    grid: TimeGrid
    path_ids: tuple
    link_ids: tuple
    delays: np.ndarray
    volumes: np.ndarray
    exit_times: Optional[np.ndarray]
    extrapolated: np.ndarray
    model: str
    link_inflow_totals: Optional[np.ndarray] = None
    link_outflow_totals: Optional[np.ndarray] = None

    def delay_at(self, path_id, t) -> float:
        row = self.delays[self.path_ids.index(path_id)]
        return float(np.interp(float(t), self.grid.edges, row))


def uniform_profile(spec: NetworkSpec, grid: TimeGrid) -> PathFlowProfile:
    """Feasible start: each O-D demand split evenly over paths and time."""
    values = np.empty((len(spec.paths), grid.n_bins))
    horizon = grid.tf - grid.t0
    for i, path in enumerate(spec.paths):
        od = spec.od_of_path(path)
        n_paths = len(spec.paths_of_od(od.key))
        values[i, :] = od.demand / (n_paths * horizon)
    return PathFlowProfile(grid, values, [p.id for p in spec.paths])


def free_flow_delay(spec: NetworkSpec, path: Path) -> float:
    return float(sum(spec.links_by_id[lid].free_flow_time
                     for lid in path.links))


def _interp_known(samples: np.ndarray, s: float, grid: TimeGrid) -> float:
    # linear interpolation between edge samples; callers guarantee coverage
    pos = (s - grid.t0) / grid.dt
    idx = int(np.clip(np.floor(pos), 0, grid.n_bins - 1))
    frac = pos - idx
    return (1.0 - frac) * samples[idx] + frac * samples[idx + 1]


def _invert_exit_times(tau_known: np.ndarray, t: float,
                       grid: TimeGrid) -> Optional[float]:
    # entry time whose exit is t, or None when nothing has exited by t
    if t <= tau_known[0]:
        return None
    pos = int(np.searchsorted(tau_known, t))
    lo, hi = tau_known[pos - 1], tau_known[pos]
    return grid.edges[pos - 1] + (t - lo) / (hi - lo) * grid.dt


def _whole_link_field(spec: NetworkSpec, flows: PathFlowProfile) -> DelayField:
    grid = flows.grid
    n = grid.n_bins
    dt = grid.dt
    edges = grid.edges
    link_ids = tuple(link.id for link in spec.links)
    link_index = {lid: i for i, lid in enumerate(link_ids)}
    a = np.array([link.free_flow_time for link in spec.links])
    b = np.array([link.congestion_slope for link in spec.links])
    if dt > a.min() * (1.0 + 1e-12):
        slow = spec.links[int(np.argmin(a))].id
        raise DelayModelError(
            f"bin width {dt:.6g} exceeds the free-flow time of link "
            f"{slow!r}; refine the grid so every link spans at least one bin")

    chains = [[link_index[lid] for lid in path.links] for path in spec.paths]
    cum_departures = np.zeros((flows.n_paths, n + 1))
    np.cumsum(flows.values * dt, axis=1, out=cum_departures[:, 1:])

    # arrivals[p][i][k]: cumulative path-p flow past the exit of its i-th
    # link by edge t_k; index 0 is the departure curve itself
    arrivals = [np.zeros((len(chain) + 1, n + 1)) for chain in chains]
    for p, curve in enumerate(arrivals):
        curve[0] = cum_departures[p]

    volumes = np.zeros((len(link_ids), n + 1))
    exit_times = np.empty((len(link_ids), n + 1))
    exit_times[:, 0] = edges[0] + a

    contributors = {}
    for p, chain in enumerate(chains):
        for i, l in enumerate(chain, start=1):
            contributors.setdefault(l, []).append((p, i))

    for k in range(1, n + 1):
        tk = edges[k]
        for p, chain in enumerate(chains):
            for i, l in enumerate(chain, start=1):
                s = _invert_exit_times(exit_times[l, :k], tk, grid)
                if s is None or s <= grid.t0:
                    arrivals[p][i, k] = 0.0
                else:
                    arrivals[p][i, k] = _interp_known(arrivals[p][i - 1], s,
                                                      grid)
        for l, users in contributors.items():
            vol = sum(arrivals[p][i - 1, k] - arrivals[p][i, k]
                      for p, i in users)
            volumes[l, k] = max(vol, 0.0)
        exit_times[:, k] = tk + a + b * volumes[:, k]
        stalled = np.flatnonzero(exit_times[:, k] <= exit_times[:, k - 1])
        if stalled.size:
            l = int(stalled[0])
            raise FifoViolationError(
                f"exit times of link {link_ids[l]!r} stopped increasing "
                f"at t={tk:.6g}", link_id=link_ids[l], time=float(tk))

    delays = np.empty((flows.n_paths, n + 1))
    extrapolated = np.zeros((flows.n_paths, n + 1), dtype=bool)
    for p, chain in enumerate(chains):
        for k in range(n + 1):
            s = edges[k]
            past_end = False
            for l in chain:
                if s > grid.tf:
                    past_end = True
                    s = s + a[l] + b[l] * volumes[l, n]
                else:
                    s = _interp_known(exit_times[l], s, grid)
            delays[p, k] = s - edges[k]
            extrapolated[p, k] = past_end

    inflow_totals = np.zeros(len(link_ids))
    outflow_totals = np.zeros(len(link_ids))
    for l, users in contributors.items():
        inflow_totals[l] = sum(arrivals[p][i - 1, n] for p, i in users)
        outflow_totals[l] = sum(arrivals[p][i, n] for p, i in users)

    return DelayField(grid=grid, path_ids=flows.path_ids, link_ids=link_ids,
                      delays=delays, volumes=volumes, exit_times=exit_times,
                      extrapolated=extrapolated, model=WHOLE_LINK,
                      link_inflow_totals=inflow_totals,
                      link_outflow_totals=outflow_totals)


def _instantaneous_field(spec: NetworkSpec,
                         flows: PathFlowProfile) -> DelayField:
    grid = flows.grid
    n = grid.n_bins
    edges = grid.edges
    link_ids = tuple(link.id for link in spec.links)
    link_index = {lid: i for i, lid in enumerate(link_ids)}
    a = np.array([link.free_flow_time for link in spec.links])
    b = np.array([link.congestion_slope for link in spec.links])

    cum = np.zeros((flows.n_paths, n + 1))
    np.cumsum(flows.values * grid.dt, axis=1, out=cum[:, 1:])

    def departures_by(p, times):
        return np.interp(times, edges, cum[p], left=0.0)

    volumes = np.zeros((len(link_ids), n + 1))
    for p, path in enumerate(spec.paths):
        offset = 0.0
        for lid in path.links:
            l = link_index[lid]
            volumes[l] += (departures_by(p, edges - offset)
                           - departures_by(p, edges - offset - a[l]))
            offset += a[l]

    delays = np.zeros((flows.n_paths, n + 1))
    for p, path in enumerate(spec.paths):
        for lid in path.links:
            l = link_index[lid]
            delays[p] += a[l] + b[l] * volumes[l]

    return DelayField(grid=grid, path_ids=flows.path_ids, link_ids=link_ids,
                      delays=delays, volumes=volumes, exit_times=None,
                      extrapolated=np.zeros_like(delays, dtype=bool),
                      model=INSTANTANEOUS)


def compute_delays(spec: NetworkSpec, flows: PathFlowProfile,
                   model=WHOLE_LINK) -> DelayField:
    """Delay field for the given departure rates under the chosen model.

    ``model`` is ``"whole-link"``, ``"instantaneous"``, or any callable
    ``(spec, flows) -> DelayField``.
    """
    if callable(model):
        return model(spec, flows)
    if model == WHOLE_LINK:
        return _whole_link_field(spec, flows)
    if model == INSTANTANEOUS:
        return _instantaneous_field(spec, flows)
    raise ValueError(f"unknown delay model {model!r}")


def effective_delay(field: DelayField, penalty: ArrivalPenalty, od: OdPair,
                    path: Path, t: float) -> float:
    """Travel delay plus schedule penalty for departing ``path`` at ``t``."""
    d = field.delay_at(path.id, t)
    return d + float(penalty(t + d - od.target_arrival))


def effective_delay_profile(field: DelayField, penalty: ArrivalPenalty,
                            spec: NetworkSpec) -> np.ndarray:
    """Per-bin effective delays, shape (paths, n_bins).

    Bin ``k`` is costed at its left edge, consistent with the
    piecewise-constant flow representation.
    """
    t_left = field.grid.bin_left_edges
    d_left = field.delays[:, :-1]
    targets = np.array([spec.od_of_path(p).target_arrival
                        for p in spec.paths])
    return d_left + penalty(t_left[None, :] + d_left - targets[:, None])
