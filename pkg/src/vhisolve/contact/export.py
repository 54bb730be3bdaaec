"""Legacy ASCII VTK snapshots and contact-boundary CSV traces."""

import csv
import math

import numpy as np

from vhisolve.contact.model import contact_residuals

TRACE_COLUMNS = ("t", "node_id", "w_nu", "g", "sigma_nu", "p_term", "memory_term",
                 "complementarity", "sigma_tau_norm")


def fmt(x):
    """Shortest-exact float text used in every delimited output."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def _vectors(lines, name, field):
    lines.append(f"VECTORS {name} double")
    for vx, vy in field:
        lines.append(f"{fmt(vx)} {fmt(vy)} 0")


def write_vtk(path, mesh, u_nodes, w_nodes, sigma, title="vhisolve"):
    """Unstructured grid with point vectors ``u``, ``w`` and cell tensor ``sigma``.

    ``u_nodes`` and ``w_nodes`` are ``(n_nodes, 2)``; ``sigma`` is per element
    ``[xx, yy, xy]`` (plane strain, the out-of-plane row is written as zero).
    """
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_nodes} double"]
    lines += [f"{fmt(x)} {fmt(y)} 0" for x, y in mesh.nodes]
    nel = mesh.n_elements
    lines.append(f"CELLS {nel} {4 * nel}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {nel}")
    lines += ["5"] * nel
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    _vectors(lines, "u", u_nodes)
    _vectors(lines, "w", w_nodes)
    lines.append(f"CELL_DATA {nel}")
    lines.append("TENSORS sigma double")
    for sxx, syy, sxy in sigma:
        lines.append(f"{fmt(sxx)} {fmt(sxy)} 0")
        lines.append(f"{fmt(sxy)} {fmt(syy)} 0")
        lines.append("0 0 0")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def trace_rows(sol):
    """One row per (step, contact node) with the columns of :data:`TRACE_COLUMNS`."""
    rows = []
    for n, t in enumerate(sol.times):
        r = contact_residuals(sol, n)
        for i in range(r["node_id"].size):
            rows.append((t, int(r["node_id"][i]), r["w_nu"][i], r["g"][i], r["sigma_nu"][i],
                         r["p_term"][i], r["memory_term"][i], r["complementarity"][i],
                         r["sigma_tau_norm"][i]))
    return rows


def write_trace_csv(path, sol):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(TRACE_COLUMNS)
        for row in trace_rows(sol):
            out.writerow([fmt(row[0]), row[1]] + [fmt(v) for v in row[2:]])


def write_snapshots(directory, sol, every=1):
    """``step_{n:05d}.vtk`` for every ``every``-th step and the final one."""
    asm = sol.assembly
    n_last = len(sol.times) - 1
    paths = []
    for n in range(n_last + 1):
        if n % every and n != n_last:
            continue
        path = directory / f"step_{n:05d}.vtk"
        write_vtk(path, asm.mesh, asm.full_field(sol.u.values[n]),
                  asm.full_field(sol.w.values[n]), sol.sigma[n],
                  title=f"vhisolve step {n} t={fmt(sol.times[n])}")
        paths.append(path)
    return paths


def residual_summary(sol, tol=1e-8):
    """Worst law residuals over all steps, with the traction scale used to normalize."""
    asm = sol.assembly
    worst = {"constraint_violation": 0.0, "sign": -math.inf, "complementarity": 0.0,
             "friction_excess": 0.0, "alignment": 0.0, "sigma_tau_max": 0.0}
    scale = 0.0
    sliding = 0
    for n in range(len(sol.times)):
        r = contact_residuals(sol, n, tol=tol)
        if r["node_id"].size == 0:
            continue
        for key in ("constraint_violation", "complementarity", "friction_excess",
                    "alignment"):
            worst[key] = max(worst[key], float(np.nanmax(r[key])))
        worst["sign"] = max(worst["sign"], float(np.nanmax(r["sign"])))
        worst["sigma_tau_max"] = max(worst["sigma_tau_max"],
                                     float(np.max(r["sigma_tau_norm"])))
        scale = max(scale, float(np.nanmax(np.abs(r["sigma_nu"]), initial=0.0)))
        sliding += int(r["sliding"].sum())
    loads = [np.linalg.norm(v) for v in asm.contact.tractions.values()]
    scale = max([scale, 1.0] + loads)
    if worst["sign"] == -math.inf:
        worst["sign"] = 0.0
    worst["traction_scale"] = scale
    worst["sliding_node_steps"] = sliding
    return worst
