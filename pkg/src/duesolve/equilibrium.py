"""Projection-based solver for the dynamic user equilibrium problem.

The equilibrium sought is a feasible departure-rate pattern in which, for
every O-D pair, all used path/time slots have equal and minimal effective
delay.  The solver iterates

    h_{k+1} = project(h_k - step * psi(h_k))

over the discretized feasible set (nonnegative rates whose integral meets
each O-D demand), where the projection decomposes per O-D pair into a
Euclidean projection onto a scaled simplex.  Convergence is not guaranteed
for a general delay operator; the run always terminates with its gap trace,
and a non-converged outcome is reported, not raised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .delay import (
    ArrivalPenalty,
    DelayField,
    PathFlowProfile,
    WHOLE_LINK,
    compute_delays,
    effective_delay_profile,
    uniform_profile,
)
from .errors import DelayModelError, GridMismatchError
from .function_space import (
    PIECEWISE_CONSTANT,
    PIECEWISE_LINEAR,
    SampledFunction,
    TimeGrid,
)
from .network import NetworkSpec, path_incidence
from .sensitivity import CLOSED_FORM, SensitivityResult
from .state_operator import OdeSystem, picard_solve


@dataclass(frozen=True)
class FeasibleSet:
    """Discretized feasible departure rates for a network on a grid.

    Membership means nonnegativity plus, for every O-D pair, the integral of
    its paths' rates matching the demand.
    """

    grid: TimeGrid
    demands: np.ndarray
    od_keys: tuple
    path_ids: tuple
    od_of_path: np.ndarray
    nonnegative: bool = True

    @classmethod
    def from_network(cls, spec: NetworkSpec, grid: TimeGrid) -> "FeasibleSet":
        incidence = path_incidence(spec)
        od_of_path = np.argmax(incidence, axis=1)
        return cls(grid=grid,
                   demands=np.array([od.demand for od in spec.od_pairs]),
                   od_keys=tuple(spec.od_keys),
                   path_ids=tuple(spec.path_ids),
                   od_of_path=od_of_path)

    def paths_of_od(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.od_of_path == j)

    def membership_residual(self, flows) -> float:
        """Worst violation: max of negativity and demand mismatch."""
        values = flows.values if isinstance(flows, PathFlowProfile) else flows
        worst = float(max(0.0, -values.min())) if values.size else 0.0
        for j in range(len(self.od_keys)):
            total = self.grid.dt * values[self.paths_of_od(j)].sum()
            worst = max(worst, abs(total - self.demands[j]))
        return worst

    def contains(self, flows, tol: float = 1e-9) -> bool:
        return self.membership_residual(flows) <= tol


@dataclass
class SolverConfig:
    """Knobs of the projected fixed-point iteration.

    ``support_threshold`` separates used from numerically zero flow when
    certifying; None picks ``1e-6 * Q_ij / (tf - t0)`` per O-D pair.
    """

    step_size: float = 1.0
    step_rule: str = "halving-on-gap-increase"
    max_iterations: int = 500
    gap_tolerance: float = 1e-6
    support_threshold: Optional[float] = None

    def __post_init__(self):
        if self.step_size <= 0.0 or self.max_iterations <= 0 \
                or self.gap_tolerance <= 0.0:
            raise ValueError("solver parameters must be positive")
        if self.step_rule not in ("fixed", "halving-on-gap-increase"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.support_threshold is not None and self.support_threshold <= 0:
            raise ValueError("support threshold must be positive")


@dataclass
class EquilibriumReport:
    """Solved flows with the evidence needed to audit them."""

    flows: PathFlowProfile
    costs: np.ndarray
    min_costs: np.ndarray
    gap: float
    gap_trace: list
    iterations: int
    termination: str
    feasible_set: FeasibleSet
    delay_field: DelayField
    model: str
    feasibility_residuals: list = field(default_factory=list)
    terminal_residuals: list = field(default_factory=list)

    @property
    def min_costs_by_od(self) -> dict:
        return {key: float(v) for key, v
                in zip(self.feasible_set.od_keys, self.min_costs)}


@dataclass
class CertificateViolation:
    path_id: str
    bin: int
    excess: float


@dataclass
class Certificate:
    violations: list
    support_threshold: np.ndarray
    rel_tol: float

    @property
    def ok(self) -> bool:
        return not self.violations


def _project_scaled_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{y >= 0, sum(y) = total}``.

    Sorting/thresholding: the unique shift ``theta`` with
    ``sum(max(v - theta, 0)) = total`` is found from the sorted cumulative
    sums, then applied.
    """
    if total < 0.0:
        raise ValueError("simplex total must be nonnegative")
    desc = np.sort(v)[::-1]
    cumsum = np.cumsum(desc)
    counts = np.arange(1, v.size + 1)
    candidates = desc - (cumsum - total) / counts
    rho = int(np.nonzero(candidates > 0.0)[0].max())
    theta = (cumsum[rho] - total) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def project(flows, feasible: FeasibleSet) -> PathFlowProfile:
    """Closest feasible profile in the L2 sense.

    Accepts a :class:`PathFlowProfile` or a raw (paths x bins) array (the
    gradient step may be negative).  Decomposes per O-D pair into a scaled
    simplex projection over that pair's stacked path/bin values; stacking
    order is (path order, bin index), so results are reproducible.
    """
    if isinstance(flows, PathFlowProfile):
        if flows.grid != feasible.grid or flows.path_ids != feasible.path_ids:
            raise GridMismatchError("profile does not match the feasible set")
        values = flows.values
    else:
        values = np.atleast_2d(np.asarray(flows, dtype=float))
    out = np.empty_like(values)
    dt = feasible.grid.dt
    for j in range(len(feasible.od_keys)):
        rows = feasible.paths_of_od(j)
        block = values[rows].ravel()
        projected = _project_scaled_simplex(block, feasible.demands[j] / dt)
        out[rows] = projected.reshape(rows.size, -1)
    return PathFlowProfile(feasible.grid, out, feasible.path_ids)


def min_effective_costs(costs: np.ndarray, feasible: FeasibleSet) -> np.ndarray:
    """Grid minimum of the effective delay per O-D pair."""
    return np.array([costs[feasible.paths_of_od(j)].min()
                     for j in range(len(feasible.od_keys))])


def vi_gap(flows: PathFlowProfile, costs: np.ndarray,
           feasible: FeasibleSet) -> float:
    """Equilibrium merit ``sum int (psi - v) h dt``; zero exactly at equilibrium.

    ``costs`` are the per-bin effective delays evaluated at ``flows``.
    """
    v = min_effective_costs(costs, feasible)
    excess = costs - v[feasible.od_of_path][:, None]
    return float(feasible.grid.dt * (excess * flows.values).sum())


def _cost_profile(spec, flows, penalty, model):
    fld = compute_delays(spec, flows, model=model)
    costs = effective_delay_profile(fld, penalty, spec)
    if not np.all(np.isfinite(costs)):
        raise DelayModelError("effective delays are not finite")
    return fld, costs


def solve_due(spec: NetworkSpec, penalty: ArrivalPenalty,
              feasible: FeasibleSet, config: SolverConfig = None,
              model=WHOLE_LINK) -> EquilibriumReport:
    """Projected fixed-point iteration for the equilibrium departure rates.

    Starts from the uniform feasible profile.  Every iterate is feasible by
    construction (hence its cumulative state meets the demand boundary
    values up to quadrature).  With the halving rule, a step that increases
    the gap is rejected and retried at half the step; retries count toward
    the iteration cap.  Hitting the cap returns the best iterate seen,
    flagged ``"not-converged"``.
    """
    config = config or SolverConfig()
    flows = uniform_profile(spec, feasible.grid)
    fld, costs = _cost_profile(spec, flows, penalty, model)
    gap = vi_gap(flows, costs, feasible)
    step = config.step_size

    def _residuals(profile):
        y = cumulative_state(profile, spec)
        return (feasible.membership_residual(profile),
                float(np.abs(y.values[:, -1] - feasible.demands).max()))

    feas_res, term_res = _residuals(flows)
    trace = [(0, gap, step)]
    feas_trace = [feas_res]
    term_trace = [term_res]
    best = (gap, flows, fld, costs)

    iterations = 0
    while iterations < config.max_iterations and gap > config.gap_tolerance:
        iterations += 1
        candidate = project(flows.values - step * costs, feasible)
        cand_fld, cand_costs = _cost_profile(spec, candidate, penalty, model)
        cand_gap = vi_gap(candidate, cand_costs, feasible)
        if (config.step_rule == "halving-on-gap-increase"
                and cand_gap > gap and step > 1e-12 * config.step_size):
            step *= 0.5
            trace.append((iterations, gap, step))
            continue
        flows, fld, costs, gap = candidate, cand_fld, cand_costs, cand_gap
        feas_res, term_res = _residuals(flows)
        trace.append((iterations, gap, step))
        feas_trace.append(feas_res)
        term_trace.append(term_res)
        if gap < best[0]:
            best = (gap, flows, fld, costs)

    if gap > config.gap_tolerance:
        gap, flows, fld, costs = best
        termination = "not-converged"
    else:
        termination = "converged"
    return EquilibriumReport(
        flows=flows,
        costs=costs,
        min_costs=min_effective_costs(costs, feasible),
        gap=gap,
        gap_trace=trace,
        iterations=iterations,
        termination=termination,
        feasible_set=feasible,
        delay_field=fld,
        model=model if isinstance(model, str) else getattr(
            model, "__name__", "custom"),
        feasibility_residuals=feas_trace,
        terminal_residuals=term_trace,
    )


def default_support_threshold(feasible: FeasibleSet) -> np.ndarray:
    """Per-path cutoff below which flow counts as numerically zero."""
    horizon = feasible.grid.tf - feasible.grid.t0
    per_od = 1e-6 * feasible.demands / horizon
    return per_od[feasible.od_of_path]


def certify(report: EquilibriumReport, support_threshold=None,
            rel_tol: float = 1e-2) -> Certificate:
    """Check the equilibrium condition on every used path/time slot.

    A slot with flow above the support threshold must have effective delay
    within ``rel_tol`` (relative) of its O-D pair's minimum; each violation
    records the path, bin and raw excess over the minimum.
    """
    feasible = report.feasible_set
    if support_threshold is None:
        threshold = default_support_threshold(feasible)
    else:
        threshold = np.full(len(feasible.path_ids), float(support_threshold))
    v = report.min_costs[feasible.od_of_path]
    used = report.flows.values > threshold[:, None]
    bad = used & (report.costs > v[:, None] * (1.0 + rel_tol))
    violations = [
        CertificateViolation(path_id=feasible.path_ids[p], bin=int(k),
                             excess=float(report.costs[p, k] - v[p]))
        for p, k in np.argwhere(bad)
    ]
    return Certificate(violations=violations, support_threshold=threshold,
                       rel_tol=rel_tol)


def cumulative_state_system(spec: NetworkSpec) -> OdeSystem:
    """Control-only dynamics of per-O-D cumulative departures.

    State dimension is the number of O-D pairs, the control the vector of
    path departure rates, and the right-hand side sums each pair's path
    rates; the state Jacobian is identically zero.
    """
    incidence = path_incidence(spec)
    mixing = incidence.T
    n_od, n_paths = mixing.shape
    scale = max(1.0, float(sum(od.demand for od in spec.od_pairs)))
    return OdeSystem(
        dim=n_od,
        rhs=lambda y, h, t: mixing @ h,
        rhs_bound=scale,
        lipschitz_bound=0.0,
        jac_x=lambda y, h, t: np.zeros((n_od, n_od)),
        jac_u=lambda y, h, t: mixing,
        control_box=(np.zeros(n_paths), None),
        vectorized=True,
    )


def cumulative_state(flows: PathFlowProfile, spec: NetworkSpec,
                     tol: float = 1e-12) -> SampledFunction:
    """Cumulative departures per O-D pair, starting from zero.

    Delegates to the fixed-point solver; with a zero state Jacobian a single
    sweep is exact up to quadrature, and for piecewise-constant rates the
    quadrature itself is exact.
    """
    sys = cumulative_state_system(spec)
    report = picard_solve(sys, np.zeros(sys.dim), flows.as_sampled(), tol=tol)
    return report.trajectory


def cumulative_state_variation(spec: NetworkSpec,
                               dh: SampledFunction) -> SensitivityResult:
    """Closed-form derivative of the cumulative state in direction ``dh``.

    Because the dynamics do not depend on the state, the derivative is just
    the per-O-D sum of the direction's antiderivatives.
    """
    from .function_space import cumulative_integral

    incidence = path_incidence(spec)
    cum = cumulative_integral(dh)
    values = incidence.T @ cum.values
    delta = SampledFunction(dh.grid, values, PIECEWISE_LINEAR)
    return SensitivityResult(delta_x=delta, method=CLOSED_FORM, grid=dh.grid)
