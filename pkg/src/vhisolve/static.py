"""Static inequality at a frozen time: successive approximation and a lattice oracle.

The outer map freezes the solution-dependent slot of the bifunction at the
previous iterate and splits the nonconvex functional into a convex block-norm
part, kept implicit, and a concave quadratic, linearized at the previous
iterate.  Each step is a strongly monotone convex inequality, and the map
contracts with rate ``(alpha_phi + m_J |M|^2) / m_A``.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import qmc

from vhisolve._qp import solve_qp
from vhisolve.core import (Box, CustomSet, ITERATIVE_TOL, WholeSpace,
                           check_smallness, clarke_dd, estimate_lipschitz,
                           project, select_subgrad)
from vhisolve.exceptions import (ConfigurationError, NonConvergenceError,
                                 WellPosednessError)


@dataclass(frozen=True)
class StaticInstance:
    """All data of the inequality at one time ``t``; ``z`` fills the history slot."""

    space: object
    K: object
    A: object
    phi: object
    J: object
    M: object
    f: np.ndarray
    t: float = 0.0
    z: Optional[np.ndarray] = None

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float).reshape(-1)
        if f.shape != (self.space.dim,):
            raise ConfigurationError(f"load has {f.size} entries for a space of "
                                     f"dimension {self.space.dim}", field="f")
        f.setflags(write=False)
        object.__setattr__(self, "f", f)
        if self.z is not None:
            z = np.asarray(self.z, dtype=float).reshape(-1)
            z.setflags(write=False)
            object.__setattr__(self, "z", z)

    def with_load(self, f):
        return StaticInstance(self.space, self.K, self.A, self.phi, self.J, self.M,
                              f, self.t, self.z)

    def with_history(self, z):
        return StaticInstance(self.space, self.K, self.A, self.phi, self.J, self.M,
                              self.f, self.t, z)

    @property
    def dim(self):
        return self.space.dim


@dataclass
class SolveReport:
    u: np.ndarray
    outer_iterations: int
    inner_iterations: int
    residual: float
    steps: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    q: float = float("nan")

    def observed_rate(self, skip=3):
        """Largest successive-difference ratio from iteration ``skip`` on."""
        r = [x for x in self.ratios[skip - 1:] if math.isfinite(x)]
        return max(r) if r else 0.0


# --------------------------------------------------------------------------
# convex subproblem


@dataclass
class _Convex:
    """``<A u + c, v - u> + h(v) - h(u) >= <f, v - u>`` for all ``v`` in ``K``.

    ``h(v) = sum w_i |B_i v|`` plus, when ``smooth`` is set, a convex term
    known only through a gradient-like oracle used in the forward step.
    """

    c: np.ndarray
    blocks: list
    smooth: Optional[object] = None


def _prox(inst, y, rho, sub, tol):
    """``argmin_{x in K} 1/2 |x - y|_V^2 + rho h(x)``."""
    space = inst.space
    blocks = [(B, rho * w) for B, w in sub.blocks if w > 0]
    if isinstance(inst.K, CustomSet):
        if blocks:
            raise ConfigurationError("nonsmooth terms need a polyhedral constraint set",
                                     field="K")
        return project(inst.K, y, space), 0
    if not blocks:
        return project(inst.K, y, space), 0
    C, d = inst.K.inequalities()
    res = solve_qp(space.gram, space.gram @ y, C, d, blocks, tol=tol, factor=space.factor)
    return res.x, res.iterations


def _solve_convex(inst, sub, guess, tol, max_iter=100000, lipschitz=None):
    space = inst.space
    A = inst.A
    b = inst.f - sub.c
    if A.is_affine and A.is_symmetric and sub.smooth is None \
            and not isinstance(inst.K, CustomSet):
        rhs = b if A.offset is None else b - A.offset(inst.t)
        C, d = inst.K.inequalities()
        res = solve_qp(A.matrix, rhs, C, d, sub.blocks, tol=1e-14)
        x = res.x
        if isinstance(inst.K, Box):
            x = np.clip(x, inst.K.lower, inst.K.upper)
        return x, max(res.iterations, 1)

    L = lipschitz if lipschitz is not None else estimate_lipschitz(A, space, inst.t)
    if not (L > 0) or not math.isfinite(L):
        raise ConfigurationError("Lipschitz estimate of the operator is degenerate",
                                 field="a1")
    rho = A.m_A / (L * L)
    x = project(inst.K, guess, space)
    for it in range(1, max_iter + 1):
        g = A(inst.t, x) - b
        if sub.smooth is not None:
            g = g + sub.smooth(x)
        y = x - rho * space.riesz(g)
        x_new, _ = _prox(inst, y, rho, sub, 1e-14)
        step = float(space.norm(x_new - x))
        x = x_new
        if step <= tol:
            return x, it
    raise NonConvergenceError("convex subproblem did not converge", iterates=[x])


def _frozen_terms(inst, u_prev):
    """Linear term, block terms and optional smooth oracle of the step at ``u_prev``."""
    dim = inst.dim
    c = np.zeros(dim)
    blocks = []
    smooth = None

    structure = inst.phi.structure(inst.z, u_prev)
    if structure is not None:
        g, pblocks = structure
        c = c + g
        blocks.extend((np.atleast_2d(B), float(w)) for B, w in pblocks)
    else:
        z = inst.z

        def _smooth(x, _u=u_prev):
            return inst.phi.subgrad3(z, _u, x)
        smooth = _smooth

    Mm = inst.M.matrix
    Mu = Mm @ u_prev
    split = inst.J.split(inst.t)
    if split is not None:
        jblocks, concavity = split
        blocks.extend((np.atleast_2d(B) @ Mm, float(w)) for B, w in jblocks)
        if concavity:
            c = c - concavity * (Mm.T @ (inst.M.x_space.gram @ Mu))
    else:
        zeta = select_subgrad(inst.J, inst.t, Mu)
        c = c + Mm.T @ zeta
    return _Convex(c=c, blocks=blocks, smooth=smooth), split is not None


def solve_convex_vi(inst, tol=ITERATIVE_TOL, *, frozen_u=None, zeta=None, guess=None):
    """Solve the convex inequality obtained by freezing the nonconvex data.

    The bifunction's solution slot is frozen at ``frozen_u`` (default: the
    feasible point).  With ``zeta`` given, the nonconvex term is replaced by
    the pairing ``<zeta, M v>``; otherwise its convex part is kept exactly
    and its concave part linearized at ``frozen_u``.
    """
    u0 = inst.K.feasible_point if frozen_u is None else np.asarray(frozen_u, dtype=float)
    sub, _ = _frozen_terms(inst, u0)
    if zeta is not None:
        structure = inst.phi.structure(inst.z, u0)
        c = inst.M.matrix.T @ np.asarray(zeta, dtype=float)
        if structure is not None:
            c = c + structure[0]
            blocks = [(np.atleast_2d(B), float(w)) for B, w in structure[1]]
        else:
            blocks = []
        sub = _Convex(c=c, blocks=blocks, smooth=sub.smooth)
    start = inst.K.feasible_point if guess is None else guess
    x, _ = _solve_convex(inst, sub, start, tol)
    return x


def _iteration_cap(tol, q):
    if q <= 0 or tol >= 1:
        return 10
    return max(10 * math.ceil(math.log(tol) / math.log(q)), 10)


def solve_static(inst, guess=None, tol=ITERATIVE_TOL, *, max_iter=None, check=True,
                 inner_tol=None):
    """Successive approximation for the static inequality.

    Raises :class:`WellPosednessError` when the smallness conditions fail and
    :class:`NonConvergenceError` (carrying the iterates) at the iteration cap.
    """
    report = check_smallness(inst)
    if check and not report.passed:
        raise WellPosednessError(report)
    if not np.all(np.isfinite(inst.f)):
        raise ConfigurationError("load contains non-finite entries", field="f")
    if inst.z is not None and not np.all(np.isfinite(inst.z)):
        raise ConfigurationError("history term contains non-finite entries", field="z")
    q = report.q
    cap = max_iter if max_iter is not None else _iteration_cap(tol, q)
    inner_tol = tol * max(1e-3, 1.0 - q) * 0.1 if inner_tol is None else inner_tol
    lip = None if inst.A.is_affine and inst.A.is_symmetric else \
        estimate_lipschitz(inst.A, inst.space, inst.t)

    start = inst.K.feasible_point if guess is None else np.asarray(guess, dtype=float)
    u = project(inst.K, start, inst.space)
    iterates = [u]
    steps = []
    ratios = []
    inner_total = 0
    warned = False
    for k in range(1, cap + 1):
        sub, exact = _frozen_terms(inst, u)
        if not exact and not warned:
            warnings.warn("nonconvex functional has no convex splitting; freezing a "
                          "subgradient, contraction is not guaranteed", RuntimeWarning,
                          stacklevel=2)
            warned = True
        u_new, inner = _solve_convex(inst, sub, u, inner_tol, lipschitz=lip)
        inner_total += inner
        step = float(inst.space.norm(u_new - u))
        if steps:
            ratios.append(step / steps[-1] if steps[-1] > 0 else 0.0)
        steps.append(step)
        u = u_new
        iterates.append(u)
        if step <= tol:
            return SolveReport(u=u, outer_iterations=k, inner_iterations=inner_total,
                               residual=step, steps=steps, ratios=ratios, q=q)
    raise NonConvergenceError(f"static solve did not reach tol={tol:g} in {cap} "
                              "iterations", iterates=iterates)


# --------------------------------------------------------------------------
# residual and lattice oracle


def _eval_A(inst, U):
    U = np.asarray(U, dtype=float)
    try:
        out = np.asarray(inst.A(inst.t, U), dtype=float)
        if out.shape == U.shape:
            return out
    except (ValueError, TypeError):
        pass
    return np.array([inst.A(inst.t, u) for u in U.reshape(-1, U.shape[-1])]).reshape(U.shape)


def _gap_terms(inst, u, V, radius=0.0):
    """``<f - A u, v - u> - phi(z,u,v) + phi(z,u,u) - J0(Mu; M(v - u))`` for rows of V."""
    Au = np.asarray(inst.A(inst.t, u), dtype=float)
    D = V - u
    lin = D @ (inst.f - Au)
    phi_v = np.asarray(inst.phi(inst.z, u, V), dtype=float)
    phi_u = float(inst.phi(inst.z, u, u))
    Mu = inst.M.matrix @ u
    jd = np.asarray(clarke_dd(inst.J, inst.t, Mu, D @ inst.M.matrix.T, radius), dtype=float)
    return lin - phi_v + phi_u - jd


def default_probes(inst, u, count=1000, seed=0):
    """Quasi-random points of ``K`` plus coordinate moves along the boundary."""
    dim = inst.dim
    K = inst.K
    u = np.asarray(u, dtype=float)
    sob = qmc.Sobol(d=dim, scramble=True, seed=seed)
    # a power-of-two draw keeps the balance properties; extra points are dropped
    pts = sob.random_base2(max(0, math.ceil(math.log2(max(count, 1)))))[:count]
    if isinstance(K, Box) and K.bounded:
        lo, hi = np.array(K.lower), np.array(K.upper)
        P = lo + pts * (hi - lo)
    else:
        R = max(1.0, float(np.max(np.abs(u))))
        P = u + R * (2.0 * pts - 1.0)
        if not isinstance(K, WholeSpace):
            P = np.array([project(K, p, inst.space) for p in P])
    extra = [u]
    for scale in (1e-3, 1e-1, 1.0):
        for i in range(dim):
            for sgn in (1.0, -1.0):
                e = u.copy()
                e[i] += sgn * scale
                extra.append(project(K, e, inst.space))
    if isinstance(K, Box) and K.bounded and dim <= 10:
        corners = np.array(np.meshgrid(*[[a, b] for a, b in zip(K.lower, K.upper)],
                                       indexing="ij")).reshape(dim, -1).T
        extra.extend(corners)
    return np.vstack([P, np.array(extra)])


def residual_static(inst, u, probes=None, *, tol=1e-10, kink_radius=1e-9):
    """Smallest value of LHS minus RHS of the inequality over the probe set.

    A value ``>= -tol`` certifies that ``u`` solves the inequality on the
    probes.  Kinks of the nonconvex term closer than ``kink_radius`` (in the
    ``X`` norm, relative to ``max(1, |Mu|)``) count as hit, so roundoff in a
    solution lying on a kink is not mistaken for a violation.
    """
    u = np.asarray(u, dtype=float)
    if probes is None:
        probes = default_probes(inst, u)
    V = np.atleast_2d(np.asarray(probes, dtype=float))
    for i, v in enumerate(V):
        if not inst.K.contains(v, tol=tol):
            raise ValueError(f"probe {i} is not in the constraint set")
    radius = kink_radius * max(1.0, float(inst.M.x_space.norm(inst.M.matrix @ u)))
    return float(-np.max(_gap_terms(inst, u, V, radius)))


def _lattice(lo, hi, h):
    axes = []
    for a, b, s in zip(lo, hi, h):
        if s <= 0 or b <= a:
            axes.append(np.array([a]))
        else:
            n = int(math.floor((b - a) / s + 1e-9))
            axes.append(a + s * np.arange(n + 1))
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=-1)


def _contains_rows(K, P, tol=1e-12):
    ineq = K.inequalities()
    if ineq is None:
        return np.array([K.contains(p, tol) for p in P], dtype=bool)
    C, d = ineq
    if C.shape[0] == 0:
        return np.ones(P.shape[0], dtype=bool)
    return np.all(P @ C.T <= d + tol, axis=-1)


def _gap_batch(inst, U, V, radius=0.0):
    """Gap terms for candidates ``U (n, d)`` against test points ``V (n, m, d)``."""
    Au = _eval_A(inst, U)
    D = V - U[:, None, :]
    lin = np.einsum("nmi,ni->nm", D, inst.f - Au)
    phi_v = np.asarray(inst.phi(inst.z, U[:, None, :], V), dtype=float)
    phi_u = np.asarray(inst.phi(inst.z, U, U), dtype=float)
    Mm = inst.M.matrix
    jd = np.asarray(clarke_dd(inst.J, inst.t, (U @ Mm.T)[:, None, :], D @ Mm.T, radius),
                    dtype=float)
    out = lin - phi_v + phi_u[:, None] - jd
    if out.shape != V.shape[:2]:
        raise ValueError("batch evaluation has the wrong shape")
    return out


def _worst_gap(inst, U, V, radius=0.0):
    """Worst violation per unit distance, ``max_v gap(u, v) / |v - u|_V``."""
    try:
        g = _gap_batch(inst, U, V, radius)
    except (ValueError, TypeError, IndexError):
        g = np.array([_gap_terms(inst, u, v, radius) for u, v in zip(U, V)])
    dist = inst.space.norm(V - U[:, None, :])
    g = np.where(dist > 0, g / np.where(dist > 0, dist, 1.0), 0.0)
    return np.max(g, axis=1)


def _lattice_radius(inst, h):
    """Largest ``X``-norm image of half a lattice cell diagonal.

    Every kink surface passes within this distance of some lattice point.
    """
    dim = inst.dim
    signs = _lattice(-np.ones(dim), np.ones(dim), 2 * np.ones(dim))
    return float(np.max(inst.M.x_space.norm((0.5 * signs * h) @ inst.M.matrix.T)))


def brute_force_static(inst, grid_step, *, bounds=None, points_per_axis=None,
                       chunk=64):
    """Lattice minimizer of the worst inequality violation.

    The violation against a test point ``v`` is measured per unit distance
    ``|v - u|_V``; near an active constraint with a small multiplier the raw
    violation grows only quadratically, and the normalization keeps the
    lattice error proportional to ``grid_step``.  Each level searches a
    lattice around the previous best point, shrinking the spacing fourfold
    until the final level lies on the ``grid_step`` lattice anchored at the
    lower corner.  Test directions combine a coarse
    global lattice of ``K`` with a local stencil around the candidate.  Ties
    go to the lexicographically smallest point.
    """
    dim = inst.dim
    if dim > 3:
        raise ConfigurationError("brute force is limited to dimension 3", field="dim")
    K = inst.K
    if isinstance(K, Box) and K.bounded:
        lo, hi = np.array(K.lower), np.array(K.upper)
    elif bounds is not None:
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)
    else:
        raise ConfigurationError("brute force needs a bounded box", field="K")
    if not grid_step > 0:
        raise ConfigurationError("grid_step must be positive", field="grid_step")

    n_axis = points_per_axis or (41 if dim <= 2 else 21)
    width = hi - lo
    active = width > 0
    if not np.any(active):
        return lo.copy()

    coarse_h = width / (n_axis - 1)
    # global test points: a coarser lattice (it always contains the corners)
    probe_h = width / ((n_axis - 1) // 2)
    coarse = _lattice(lo, hi, probe_h)
    coarse = coarse[_contains_rows(K, coarse)]
    stencil = _lattice(-4 * np.ones(dim), 4 * np.ones(dim), np.ones(dim))
    if dim <= 2:
        # rings at 8 and 16 steps sharpen the angular resolution of test directions
        for R in (8, 16):
            ring = _lattice(-R * np.ones(dim), R * np.ones(dim), np.ones(dim))
            stencil = np.vstack([stencil, ring[np.max(np.abs(ring), axis=1) == R]])

    def best_on(cands, h):
        cands = cands[_contains_rows(K, cands)]
        cands = cands[np.lexsort(cands.T[::-1])]
        vals = np.empty(cands.shape[0])
        for s in range(0, cands.shape[0], chunk):
            U = cands[s:s + chunk]
            local = U[:, None, :] + stencil[None] * h
            ok = np.all(local >= lo - 1e-12, axis=-1) & np.all(local <= hi + 1e-12, axis=-1)
            ok &= _contains_rows(K, local.reshape(-1, dim)).reshape(ok.shape)
            local = np.where(ok[..., None], local, U[:, None, :])
            V = np.concatenate([np.broadcast_to(coarse, (U.shape[0],) + coarse.shape),
                                local], axis=1)
            vals[s:s + chunk] = _worst_gap(inst, U, V, _lattice_radius(inst, h))
        i = int(np.flatnonzero(vals <= vals.min() + 1e-15)[0])
        return cands[i]

    h = np.where(active, coarse_h, 0.0)
    best = best_on(_lattice(lo, hi, h), h)
    while np.max(h) / 4.0 > grid_step:
        win = 4.0 * h
        h = h / 4.0
        cands = _lattice(np.maximum(lo, best - win), np.minimum(hi, best + win), h)
        best = best_on(cands, h)

    # final level on the grid_step lattice anchored at lo
    win = 4.0 * h
    k_lo = np.where(active, np.ceil((np.maximum(lo, best - win) - lo) / grid_step - 1e-9), 0)
    k_hi = np.where(active, np.floor((np.minimum(hi, best + win) - lo) / grid_step + 1e-9), 0)
    step = np.where(active, grid_step, 0.0)
    cands = _lattice(lo + k_lo * grid_step, lo + k_hi * grid_step, step)
    return np.array(best_on(cands, step), dtype=float)
