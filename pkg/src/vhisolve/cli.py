"""Command line driver.

Exit status: 0 success, 1 invalid input or oracle mismatch, 2 smallness
gate failure, 3 solver nonconvergence.
"""

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from vhisolve.config import build_abstract, build_contact, load_config
from vhisolve.core import check_smallness
from vhisolve.exceptions import (ConfigurationError, NonConvergenceError,
                                 VHIError, WellPosednessError)

EXIT_OK, EXIT_INPUT, EXIT_GATE, EXIT_NONCONVERGENCE = 0, 1, 2, 3


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path, payload):
    with open(path, "w", newline="\n") as fh:
        json.dump(_clean(payload), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _fmt(x):
    from vhisolve.contact.export import fmt
    return fmt(x)


def write_trajectory_csv(path, times, values, names):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["t"] + list(names))
        for t, row in zip(times, values):
            out.writerow([_fmt(t)] + [_fmt(v) for v in row])


class _Log:
    def __init__(self, quiet):
        self.quiet = quiet

    def __call__(self, msg):
        if not self.quiet:
            print(msg)


def _load(args):
    cfg = load_config(args.config)
    steps = getattr(args, "steps", None)
    mode = getattr(args, "mode", None)
    return cfg.with_overrides(steps=steps, mode=mode)


def _build(cfg):
    """Problem (or contact assembly) plus its well-posedness report."""
    if cfg.get("grid", "steps") == 0:
        vals = {s: dict(v) for s, v in cfg.values.items()}
        vals["grid"]["steps"] = 1
        cfg = type(cfg)(cfg.kind, vals, cfg.path, cfg.lines)
    if cfg.kind == "contact":
        asm = build_contact(cfg)
        return asm, asm.problem, asm.smallness()
    problem = build_abstract(cfg)
    return None, problem, check_smallness(problem)


def _gate_message(report):
    failing = {"monotonicity": "m_A > alpha_phi + m_J*|M|^2",
               "coercivity": "alpha_A > 2*m_J*|M|^2"}
    parts = [f"{name}: {failing[name]} fails" for name in report.failing]
    if "contact" in report.extra and "monotonicity" in report.failing:
        parts.append(f"contact: {report.extra['contact']['inequality']} fails")
    return "; ".join(parts)


def _out_dir(args, cfg):
    out = Path(args.out) if args.out else Path("vhisolve-out") / Path(cfg.path).stem
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dof_names(asm, dim):
    if asm is None:
        return [f"u{j}" for j in range(dim)]
    return [f"w_n{d // 2}_{'xy'[d % 2]}" for d in asm.free_dofs]


def cmd_check(args):
    log = _Log(args.quiet)
    cfg = _load(args)
    asm, problem, report = _build(cfg)
    if args.out:
        write_json(_out_dir(args, cfg) / "wellposedness.json", report.to_dict())
    log(f"q = {report.q:.6g}  monotonicity margin = {report.monotonicity_margin:.6g}  "
        f"coercivity margin = {report.coercivity_margin:.6g}")
    if not report.passed:
        print(f"well-posedness gate failed: {_gate_message(report)}", file=sys.stderr)
        return EXIT_GATE
    log("well-posedness gate passed")
    return EXIT_OK


def _header_only(out, asm, dim, names):
    from vhisolve.contact.export import TRACE_COLUMNS
    write_trajectory_csv(out / "trajectory.csv", [], [], names)
    if asm is not None:
        with open(out / "gamma3_trace.csv", "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(TRACE_COLUMNS)


def cmd_solve(args):
    log = _Log(args.quiet)
    cfg = _load(args)
    asm, problem, report = _build(cfg)
    out = _out_dir(args, cfg)
    (out / "config.cfg").write_text(cfg.to_text())
    write_json(out / "wellposedness.json", report.to_dict())
    if not report.passed:
        print(f"well-posedness gate failed: {_gate_message(report)}", file=sys.stderr)
        return EXIT_GATE
    dim = problem.space.dim
    names = _dof_names(asm, dim)
    if cfg.get("grid", "steps") == 0:
        _header_only(out, asm, dim, names)
        write_json(out / "stepping_report.json", {"mode": cfg.get("solver", "mode"),
                                                  "steps": 0})
        log(f"zero-step run: headers written to {out}")
        return EXIT_OK

    mode = cfg.get("solver", "mode")
    kw = dict(tol=cfg.get("solver", "tol"), static_tol=cfg.get("solver", "static_tol"),
              max_sweeps=cfg.get("solver", "max_sweeps"))
    if mode == "marching":
        kw.pop("max_sweeps")
    try:
        if asm is not None:
            from vhisolve.contact import solve_contact
            sol = solve_contact(asm, mode=mode, **kw)
            traj, step_report = sol.w, sol.report
        else:
            from vhisolve.stepper import solve_trajectory
            traj, step_report = solve_trajectory(problem, mode=mode, **kw)
    except NonConvergenceError as exc:
        write_json(out / "stepping_report.json",
                   {"mode": mode, "converged": False, "message": str(exc),
                    "iterates": list(exc.iterates or []), "step": exc.step})
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE

    rep = step_report.to_dict()
    rep["converged"] = True
    write_json(out / "stepping_report.json", rep)
    write_trajectory_csv(out / "trajectory.csv", traj.times, traj.values, names)
    diagnostics = {"mode": mode, "steps": int(cfg.get("grid", "steps")),
                   "max_static_residual": max(r.residual for r in step_report.step_reports)}
    if mode == "fixed-point":
        from vhisolve.stepper import contraction_diagnostics
        try:
            diagnostics["contraction"] = contraction_diagnostics(step_report)
        except ValueError:
            diagnostics["contraction"] = {"rate": step_report.rate, "table": [],
                                          "geometric": None}
    plots = cfg.get("output", "plots")
    dpi = cfg.get("output", "dpi")
    if asm is not None:
        diagnostics.update(_contact_outputs(out, sol, cfg, plots, dpi))
    elif plots:
        from vhisolve.plotting import plot_trajectory
        plot_trajectory(out / "trajectory.png", traj.times, traj.values, labels=names,
                        dpi=dpi)
    if plots and mode == "fixed-point":
        from vhisolve.plotting import plot_sweeps
        plot_sweeps(out / "sweeps.png", step_report.distances, rate=step_report.rate,
                    dpi=dpi)
    write_json(out / "diagnostics.json", diagnostics)
    log(f"solved {len(traj.times)} nodes in {mode} mode; outputs in {out}")
    return EXIT_OK


def _contact_outputs(out, sol, cfg, plots, dpi):
    from vhisolve.contact import divergence_residual
    from vhisolve.contact.export import (residual_summary, write_snapshots,
                                         write_trace_csv)
    write_snapshots(out, sol, every=cfg.get("output", "vtk_every"))
    write_trace_csv(out / "gamma3_trace.csv", sol)
    summary = residual_summary(sol)
    scale = summary["traction_scale"]
    gates = {
        "feasibility": summary["constraint_violation"] <= 1e-8,
        "complementarity": summary["complementarity"] <= 1e-4 * scale,
        "friction_ball": summary["sigma_tau_max"] <= sol.assembly.contact.friction + 1e-6,
        "alignment": summary["alignment"] <= 1e-4,
    }
    div = max(divergence_residual(sol.assembly, sol.sigma[n], n)[0]
              for n in range(len(sol.times)))
    if plots:
        from vhisolve.plotting import plot_contact
        plot_contact(out / "contact_profile.png", sol, dpi=dpi)
    asm = sol.assembly
    return {"residuals": summary, "gates": gates, "all_gates_pass": all(gates.values()),
            "interior_equilibrium_residual": div, "history_lipschitz": asm.L_S,
            "gamma_norm": asm.gamma_norm, "L_P": asm.L_P, "dofs": asm.dim,
            "contact_nodes": asm.n_contact}


def cmd_oracle(args):
    from vhisolve.core import Box
    from vhisolve.static import brute_force_static, solve_static
    log = _Log(args.quiet)
    cfg = _load(args)
    if cfg.kind != "abstract":
        raise ConfigurationError("the oracle runs on abstract scenarios only",
                                 field="scenario.kind")
    asm, problem, report = _build(cfg)
    if not report.passed:
        print(f"well-posedness gate failed: {_gate_message(report)}", file=sys.stderr)
        return EXIT_GATE
    if problem.space.dim > 3:
        raise ConfigurationError("the oracle is limited to dimension 3", field="space.dim")
    if not (isinstance(problem.K, Box) and problem.K.bounded):
        raise ConfigurationError("the oracle needs a bounded box constraint",
                                 field="constraint.kind")
    inst = problem.static_instance(0, np.zeros(problem.space.dim))
    u = solve_static(inst, tol=1e-12).u
    v = brute_force_static(inst, args.grid_step)
    dist = float(problem.space.norm(u - v))
    bound = 5 * args.grid_step
    payload = {"solver": u, "brute_force": v, "distance": dist, "bound": bound,
               "grid_step": args.grid_step, "pass": dist <= bound}
    if args.out:
        write_json(_out_dir(args, cfg) / "oracle.json", payload)
    log(f"|solver - brute force| = {dist:.3e} (bound {bound:.1e})")
    return EXIT_OK if dist <= bound else EXIT_INPUT


def build_parser():
    parser = argparse.ArgumentParser(prog="vhisolve", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="scenario file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    common.add_argument("--steps", type=int, help="override the number of time steps")
    common.add_argument("--mode", choices=("marching", "fixed-point"),
                        help="override the stepping mode")
    p = sub.add_parser("solve", parents=[common], help="solve and write all outputs")
    p.set_defaults(func=cmd_solve)
    p = sub.add_parser("check", parents=[common], help="evaluate the well-posedness gate")
    p.set_defaults(func=cmd_check)
    p = sub.add_parser("oracle", parents=[common],
                       help="compare the static solve at t=0 with a lattice search")
    p.add_argument("--grid-step", type=float, default=1e-3)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except WellPosednessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GATE
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except VHIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
