"""Time-dependent problem on a grid: causal marching or the global history fixed point."""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from vhisolve.core import (ITERATIVE_TOL, Trajectory, check_smallness,
                           quadrature_weights)
from vhisolve.exceptions import (NonConvergenceError, VHIError,
                                 WellPosednessError)
from vhisolve.static import solve_static

MODES = ("marching", "fixed-point")


@dataclass
class SteppingReport:
    mode: str
    step_reports: list = field(default_factory=list)
    distances: list = field(default_factory=list)
    l2_distances: list = field(default_factory=list)
    rate: float = float("nan")
    history: object = None
    smallness: object = None

    @property
    def sweeps(self):
        return len(self.distances)

    def to_dict(self):
        out = {
            "mode": self.mode,
            "steps": len(self.step_reports),
            "outer_iterations": [r.outer_iterations for r in self.step_reports],
            "static_residuals": [r.residual for r in self.step_reports],
        }
        if self.mode == "fixed-point":
            out["sweep_distances_sup"] = list(self.distances)
            out["sweep_distances_l2"] = list(self.l2_distances)
            out["fitted_rate"] = self.rate
        return out


def _workers(workers):
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("VHISOLVE_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _solve_node(problem, n, eta, guess, static_tol):
    inst = problem.static_instance(n, eta)
    return solve_static(inst, guess=guess, tol=static_tol, check=False)


def _march(problem, static_tol, guess):
    grid = problem.grid
    S = problem.S.with_quadrature("left")
    dim = problem.space.dim
    U = np.zeros((len(grid), dim))
    etas = np.zeros_like(U)
    reports = []
    prev = problem.K.feasible_point if guess is None else guess[0]
    for n in range(len(grid)):
        eta = S.apply(U, n, grid)
        etas[n] = eta
        start = prev if guess is None else guess[n]
        try:
            rep = _solve_node(problem, n, eta, start, static_tol)
        except VHIError as exc:
            raise NonConvergenceError(f"static solve failed at step {n}: {exc}",
                                      partial=U[:n].copy(), step=n) from exc
        U[n] = rep.u
        prev = rep.u
        reports.append(rep)
    return U, etas, reports


def _sweep(problem, etas, static_tol, guesses, workers):
    nodes = range(len(problem.grid))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reps = list(pool.map(lambda n: _solve_node(problem, n, etas[n], guesses[n],
                                                       static_tol), nodes))
    else:
        reps = [_solve_node(problem, n, etas[n], guesses[n], static_tol) for n in nodes]
    return np.array([r.u for r in reps]), reps


def fit_rate(distances):
    """Least-squares geometric rate of a distance sequence (0 if it hits zero)."""
    d = np.asarray(distances, dtype=float)
    if d.size and d[-1] == 0.0:
        return 0.0
    pos = d[d > 0]
    if pos.size < 2:
        return 0.0
    k = np.arange(pos.size)
    slope = np.polyfit(k, np.log(pos), 1)[0]
    return float(math.exp(slope))


def solve_trajectory(problem, mode="marching", tol=ITERATIVE_TOL, *, static_tol=None,
                     max_sweeps=200, eta0=None, guess=None, workers=None, check=True):
    """Solve on every grid node; returns ``(Trajectory, SteppingReport)``.

    ``marching`` evaluates the history with left-rectangle quadrature so each
    step only needs the past.  ``fixed-point`` iterates ``eta <- S u(eta)``
    over whole trajectories with the history operator's own quadrature,
    starting from ``S`` applied to the constant feasible trajectory, until
    the sup over nodes of the dual-norm change is at most ``tol``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    report = check_smallness(problem)
    if check and not report.passed:
        raise WellPosednessError(report)
    static_tol = tol / 10.0 if static_tol is None else static_tol
    grid = problem.grid
    space = problem.space

    if mode == "marching":
        U, etas, reps = _march(problem, static_tol, guess)
        return (Trajectory(grid, U),
                SteppingReport(mode=mode, step_reports=reps, history=etas,
                               smallness=report))

    S = problem.S
    workers = _workers(workers)
    if eta0 is None:
        const = np.tile(problem.K.feasible_point, (len(grid), 1))
        etas = S(const, grid)
    else:
        etas = np.array(eta0, dtype=float).reshape(len(grid), space.dim)
    guesses = (np.tile(problem.K.feasible_point, (len(grid), 1)) if guess is None
               else np.asarray(guess, dtype=float))
    distances, l2 = [], []
    w = quadrature_weights(grid.steps, grid.dt, "trapezoid")
    U, reps = None, []
    for sweep in range(1, max_sweeps + 1):
        try:
            U, reps = _sweep(problem, etas, static_tol, guesses, workers)
        except VHIError as exc:
            raise NonConvergenceError(f"static solve failed in sweep {sweep}: {exc}",
                                      partial=U) from exc
        new = S(U, grid)
        diff = space.dual_norm(new - etas)
        distances.append(float(np.max(diff)))
        l2.append(float(np.sqrt(diff ** 2 @ w)))
        etas = new
        guesses = U
        if distances[-1] <= tol:
            break
    else:
        raise NonConvergenceError(f"history fixed point did not reach tol={tol:g} in "
                                  f"{max_sweeps} sweeps", iterates=distances, partial=U)
    rep = SteppingReport(mode=mode, step_reports=reps, distances=distances,
                         l2_distances=l2, rate=fit_rate(distances), history=etas,
                         smallness=report)
    return Trajectory(grid, U), rep


def contraction_diagnostics(report):
    """Fitted geometric rate and the per-sweep table of a fixed-point run."""
    d = list(report.distances) if hasattr(report, "distances") else list(report)
    if not (d and d[-1] == 0.0) and len(d) < 3:
        raise ValueError(f"need at least 3 sweeps, got {len(d)}")
    rate = fit_rate(d)
    table = []
    for k, dist in enumerate(d):
        ratio = dist / d[k - 1] if k and d[k - 1] > 0 else float("nan")
        table.append({"sweep": k + 1, "distance": dist, "ratio": ratio})
    geometric = all(d[k + 1] <= 1.05 * d[k] for k in range(1, len(d) - 1))
    return {"rate": rate, "table": table, "geometric": bool(geometric and rate < 1.0)}


def gronwall_uniqueness_check(problem, tol=1e-8, *, starts=5, mode="fixed-point",
                              seed=0, scale=1.0):
    """Solve from several initializations and compare the trajectories.

    Refuses (raises :class:`WellPosednessError`) before running when the
    smallness conditions fail.  The report's ``passed`` says whether all
    pairwise sup-norm differences are within ``10 tol``.
    """
    gate = check_smallness(problem)
    if not gate.passed:
        raise WellPosednessError(gate)
    rng = np.random.default_rng(seed)
    grid = problem.grid
    dim = problem.space.dim
    trajs = []
    for k in range(starts):
        if k == 0:
            eta0, guess = None, None
        else:
            eta0 = scale * rng.standard_normal((len(grid), dim))
            guess = scale * rng.standard_normal((len(grid), dim))
        traj, _ = solve_trajectory(problem, mode=mode, tol=tol, eta0=eta0, guess=guess)
        trajs.append(traj)
    worst = 0.0
    for i in range(starts):
        for j in range(i + 1, starts):
            worst = max(worst, trajs[i].sup_distance(trajs[j], problem.space.norm))
    return {"max_pairwise": worst, "threshold": 10 * tol, "passed": worst <= 10 * tol,
            "trajectories": trajs}
