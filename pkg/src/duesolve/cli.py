"""Command-line driver.

    duesolve validate <network>
    duesolve solve <network> <scenario> [--out DIR] [--bins N] [--tol X]
                                        [--max-iter K]
    duesolve diagnose <mode> <scenario> [--out DIR] [--bins N]

Solve writes flows.csv, delays.csv, gap.csv and summary.json into the output
directory and exits 0 when converged, 2 when not converged, 1 on input
errors.  Diagnose modes are ``picard`` (contraction ratios),
``sensitivity`` (derivative cross-checks) and ``continuity`` (perturbation
scaling); each writes a CSV report.  Set DUESOLVE_LOG=debug|info|warning for
log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .delay import compute_delays, effective_delay_profile
from .equilibrium import (
    FeasibleSet,
    certify,
    cumulative_state,
    cumulative_state_variation,
    solve_due,
    uniform_profile,
)
from .errors import DueSolveError, InputError
from .function_space import (
    PIECEWISE_CONSTANT,
    SampledFunction,
    sup_norm,
)
from .network import load_network, validate
from .scenario import load_scenario
from .sensitivity import finite_difference_gateaux, solve_variational
from .state_operator import OdeSystem, continuity_probe, picard_solve

log = logging.getLogger("duesolve")

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(x) if isinstance(x, float) else x for x in row])
    _atomic_write(path, buf.getvalue())


def _write_json(path, obj):
    import json
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _apply_overrides(scenario, args):
    if getattr(args, "bins", None):
        from .function_space import TimeGrid
        g = scenario.grid
        scenario.grid = TimeGrid(g.t0, g.tf, args.bins)
    if getattr(args, "tol", None):
        scenario.solver.gap_tolerance = args.tol
    if getattr(args, "max_iter", None):
        scenario.solver.max_iterations = args.max_iter
    if getattr(args, "out", None):
        scenario.output_dir = args.out
    return scenario


def cmd_validate(args):
    spec = load_network(args.network)
    problems = validate(spec)
    if problems:
        for p in problems:
            print(f"violation: {p}")
        return EXIT_INPUT_ERROR
    print(f"{args.network}: ok ({len(spec.nodes)} nodes, {len(spec.links)} "
          f"links, {len(spec.paths)} paths, {len(spec.od_pairs)} O-D pairs)")
    return EXIT_OK


def cmd_solve(args):
    spec = load_network(args.network)
    scenario = _apply_overrides(load_scenario(args.scenario), args)
    problems = validate(spec, grid=scenario.grid)
    if problems:
        for p in problems:
            print(f"violation: {p}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    feasible = FeasibleSet.from_network(spec, scenario.grid)
    report = solve_due(spec, scenario.penalty, feasible, scenario.solver,
                       model=scenario.delay_model)
    out_dir = scenario.output_dir or "."
    grid = scenario.grid
    t_left = grid.bin_left_edges

    flow_rows = []
    delay_rows = []
    for p, pid in enumerate(report.flows.path_ids):
        for k in range(grid.n_bins):
            flow_rows.append((pid, k, float(t_left[k]),
                              float(report.flows.values[p, k])))
            delay_rows.append((pid, k, float(t_left[k]),
                               float(report.delay_field.delays[p, k]),
                               float(report.costs[p, k])))
    _write_csv(os.path.join(out_dir, "flows.csv"),
               ["path", "bin", "t", "h"], flow_rows)
    _write_csv(os.path.join(out_dir, "delays.csv"),
               ["path", "bin", "t", "D_p", "Psi_p"], delay_rows)
    _write_csv(os.path.join(out_dir, "gap.csv"),
               ["iteration", "gap", "step"],
               [(it, float(g), float(s)) for it, g, s in report.gap_trace])

    certificate = certify(report,
                          support_threshold=scenario.solver.support_threshold)
    summary = {
        "termination": report.termination,
        "iterations": report.iterations,
        "gap": report.gap,
        "gap_tolerance": scenario.solver.gap_tolerance,
        "min_effective_delays": {
            f"{o}->{d}": v for (o, d), v in report.min_costs_by_od.items()},
        "feasibility_residual_max": max(report.feasibility_residuals),
        "terminal_residual_max": max(report.terminal_residuals),
        "certificate_violations": len(certificate.violations),
        "delay_model": report.model,
        "extrapolated_samples": int(report.delay_field.extrapolated.sum()),
        "seed": scenario.seed,
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)

    print(f"{report.termination}: gap={report.gap:.6g} after "
          f"{report.iterations} iterations (artifacts in {out_dir})")
    return EXIT_OK if report.termination == "converged" else EXIT_NOT_CONVERGED


def _diag_picard(scenario, out_dir):
    sys_decay = OdeSystem(dim=1, rhs=lambda x, u, t: -x, rhs_bound=2.0,
                          lipschitz_bound=1.0,
                          jac_x=lambda x, u, t: np.array([[-1.0]]),
                          jac_u=lambda x, u, t: np.zeros((1, 1)),
                          vectorized=True)
    grid = scenario.grid
    u = SampledFunction.constant(grid, [0.0], PIECEWISE_CONSTANT)
    report = picard_solve(sys_decay, [1.0], u, tol=1e-10)
    rows = []
    for k, delta in enumerate(report.deltas):
        ratio = report.deltas[k] / report.deltas[k - 1] if k else float("nan")
        rows.append((k, float(delta), float(ratio)))
    _write_csv(os.path.join(out_dir, "picard_diagnostics.csv"),
               ["iteration", "delta", "ratio"], rows)
    ratios = [r for _, _, r in rows[1:]]
    print(f"picard: {report.iterations} iterations, "
          f"max contraction ratio {max(ratios):.4f}, "
          f"certified bound {report.bound:.3e}")
    return EXIT_OK


def _diag_sensitivity(scenario, out_dir):
    rows = []
    if scenario.network:
        spec = load_network(scenario.network)
        from .equilibrium import cumulative_state_system
        sys_net = cumulative_state_system(spec)
        grid = scenario.grid
        rng = np.random.default_rng(scenario.seed)
        flows = uniform_profile(spec, grid)
        h = flows.as_sampled()
        dh = SampledFunction(
            grid, rng.uniform(-1.0, 1.0, size=(len(spec.paths), grid.n_bins)),
            PIECEWISE_CONSTANT)
        base = picard_solve(sys_net, np.zeros(sys_net.dim), h, tol=1e-12)
        variational = solve_variational(sys_net, base.trajectory, h, dh)
        closed = cumulative_state_variation(spec, dh)
        err = sup_norm(variational.delta_x - closed.delta_x)
        rows.append(("cumulative-state", "variational-vs-closed-form",
                     float(err)))
    sys_cubic = OdeSystem(
        dim=1, rhs=lambda x, u, t: -x ** 3 + u, rhs_bound=2.0,
        lipschitz_bound=3.0,
        jac_x=lambda x, u, t: np.array([[-3.0 * float(x[0]) ** 2]]),
        jac_u=lambda x, u, t: np.array([[1.0]]), vectorized=False)
    grid = scenario.grid
    u = SampledFunction.constant(grid, [0.0], PIECEWISE_CONSTANT)
    du = SampledFunction.constant(grid, [1.0], PIECEWISE_CONSTANT)
    base = picard_solve(sys_cubic, [0.5], u, tol=1e-13, max_iter=400)
    variational = solve_variational(sys_cubic, base.trajectory, u, du)
    for eps in (1e-3, 1e-4):
        fd = finite_difference_gateaux(sys_cubic, [0.5], u, du, eps)
        err = sup_norm(fd.delta_x - variational.delta_x) \
            / sup_norm(variational.delta_x)
        rows.append(("cubic-decay", f"fd-vs-variational eps={eps:g}",
                     float(err)))
    _write_csv(os.path.join(out_dir, "sensitivity_diagnostics.csv"),
               ["system", "check", "error"], rows)
    worst = max(r[2] for r in rows)
    print(f"sensitivity: {len(rows)} checks, worst error {worst:.3e}")
    return EXIT_OK


def _diag_continuity(scenario, out_dir):
    grid = scenario.grid
    if scenario.network:
        spec = load_network(scenario.network)
        from .equilibrium import cumulative_state_system
        sys_probe = cumulative_state_system(spec)
        u = uniform_profile(spec, grid).as_sampled()
        du = SampledFunction.constant(grid, np.ones(len(spec.paths)),
                                      PIECEWISE_CONSTANT)
        x0 = np.zeros(sys_probe.dim)
        label = "cumulative-state"
    else:
        sys_probe = OdeSystem(dim=1, rhs=lambda x, u, t: -x + u,
                              rhs_bound=2.0, lipschitz_bound=1.0,
                              jac_x=lambda x, u, t: np.array([[-1.0]]),
                              jac_u=lambda x, u, t: np.array([[1.0]]),
                              vectorized=True)
        u = SampledFunction.constant(grid, [0.0], PIECEWISE_CONSTANT)
        du = SampledFunction.constant(grid, [1.0], PIECEWISE_CONSTANT)
        x0 = np.array([1.0])
        label = "linear-decay"
    pairs = continuity_probe(sys_probe, x0, u, du, (1e-1, 1e-2, 1e-3))
    rows = [(label, float(eps), float(dev), float(dev / eps))
            for eps, dev in pairs]
    _write_csv(os.path.join(out_dir, "continuity_diagnostics.csv"),
               ["system", "eps", "deviation", "deviation_per_eps"], rows)
    print(f"continuity: deviations {[f'{d:.3e}' for _, _, d, _ in rows]}")
    return EXIT_OK


def cmd_diagnose(args):
    scenario = _apply_overrides(load_scenario(args.scenario), args)
    out_dir = scenario.output_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    if args.mode == "picard":
        return _diag_picard(scenario, out_dir)
    if args.mode == "sensitivity":
        return _diag_sensitivity(scenario, out_dir)
    if args.mode == "continuity":
        return _diag_continuity(scenario, out_dir)
    raise InputError(f"unknown diagnostic mode {args.mode!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="duesolve",
        description="dynamic user equilibrium solver")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check a network file")
    p_validate.add_argument("network")

    p_solve = sub.add_parser("solve", help="solve for equilibrium flows")
    p_solve.add_argument("network")
    p_solve.add_argument("scenario")

    p_diag = sub.add_parser("diagnose", help="run solver diagnostics")
    p_diag.add_argument("mode", choices=["picard", "sensitivity",
                                         "continuity"])
    p_diag.add_argument("scenario")

    for p in (p_solve, p_diag):
        p.add_argument("--out", help="output directory (overrides scenario)")
        p.add_argument("--bins", type=int, help="override horizon n_bins")
        p.add_argument("--tol", type=float, help="override gap tolerance")
        p.add_argument("--max-iter", type=int, dest="max_iter",
                       help="override iteration cap")
    return parser


def main(argv=None) -> int:
    level = os.environ.get("DUESOLVE_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = build_parser().parse_args(argv)
    handlers = {"validate": cmd_validate, "solve": cmd_solve,
                "diagnose": cmd_diagnose}
    try:
        return handlers[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except DueSolveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
