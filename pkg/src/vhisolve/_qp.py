"""Small dense solver for strongly convex quadratic programs with block norms.

Solves

    min_x  1/2 x^T H x - b^T x + sum_i w_i ||B_i x||_2    s.t.  C x <= d

with ``H`` symmetric positive definite.  The problem is attacked through its
dual, which lives on a product of a nonnegative orthant (one multiplier per
inequality row) and Euclidean balls of radius ``w_i`` (one per block).  The
dual is solved by accelerated projected gradient with adaptive restart, and
the result is polished by an equality-constrained solve on the identified
active face.  Polishing is exact for scalar blocks.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigvalsh


@dataclass
class QPResult:
    x: np.ndarray
    mu: np.ndarray
    lambdas: list = field(default_factory=list)
    iterations: int = 0
    polished: bool = False
    kkt_error: float = 0.0


def _block_slices(m_c, blocks):
    out = []
    start = m_c
    for B, _ in blocks:
        k = B.shape[0]
        out.append(slice(start, start + k))
        start += k
    return out


def _project_dual(z, m_c, slices, radii):
    z = z.copy()
    if m_c:
        np.maximum(z[:m_c], 0.0, out=z[:m_c])
    for sl, r in zip(slices, radii):
        nrm = np.linalg.norm(z[sl])
        if nrm > r:
            z[sl] *= r / nrm if nrm > 0 else 0.0
    return z


def solve_qp(H, b, C=None, d=None, blocks=(), *, tol=1e-13, max_iter=200000,
             factor=None):
    """Solve the block-norm regularised QP described in the module docstring.

    Parameters
    ----------
    H : (n, n) ndarray
        Symmetric positive definite Hessian.
    b : (n,) ndarray
        Linear term (enters with a minus sign).
    C, d : ndarray, optional
        Inequality rows ``C x <= d``.
    blocks : sequence of (B, w)
        Each ``B`` is a ``(k, n)`` matrix and ``w >= 0`` its weight.
    factor : optional
        Precomputed ``scipy.linalg.cho_factor(H)``.

    Returns
    -------
    QPResult
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if factor is None:
        factor = cho_factor(np.asarray(H, dtype=float))
    blocks = [(np.atleast_2d(np.asarray(B, dtype=float)), float(w))
              for B, w in blocks if float(w) > 0.0]
    if C is None or len(C) == 0:
        C = np.zeros((0, n))
        d = np.zeros(0)
    C = np.atleast_2d(np.asarray(C, dtype=float)).reshape(-1, n)
    d = np.asarray(d, dtype=float).reshape(-1)
    m_c = C.shape[0]

    x0 = cho_solve(factor, b)
    if m_c == 0 and not blocks:
        return QPResult(x=x0, mu=np.zeros(0))

    E = np.vstack([C] + [B for B, _ in blocks])
    HinvEt = cho_solve(factor, E.T)
    Q = E @ HinvEt
    Q = 0.5 * (Q + Q.T)
    q = E @ x0
    q[:m_c] -= d

    slices = _block_slices(m_c, blocks)
    weights = np.array([w for _, w in blocks])

    # diagonal scaling, uniform inside each block so balls stay balls
    diag = np.clip(np.diag(Q).copy(), 1e-300, None)
    s = 1.0 / np.sqrt(diag)
    for sl in slices:
        s[sl] = 1.0 / np.sqrt(diag[sl].mean())
    radii = [w / s[sl][0] for sl, w in zip(slices, weights)]
    Qs = s[:, None] * Q * s[None, :]
    qs = s * q

    L = float(eigvalsh(Qs)[-1]) if Qs.shape[0] <= 400 else _power_norm(Qs)
    if L <= 0.0:
        L = 1.0
    step = 1.0 / L

    def primal(z):
        return x0 - HinvEt @ (s * z)

    scale = 1.0 + np.abs(qs).max() if qs.size else 1.0
    z = _project_dual(np.zeros_like(qs), m_c, slices, radii)
    y = z.copy()
    t = 1.0
    best = None
    it = 0
    next_polish = 50
    for it in range(1, max_iter + 1):
        g = Qs @ y - qs
        z_new = _project_dual(y - step * g, m_c, slices, radii)
        gm = np.linalg.norm(z_new - y) * L
        if np.dot(y - z_new, z_new - z) > 0.0:
            t = 1.0
            y = z_new.copy()
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = z_new + ((t - 1.0) / t_new) * (z_new - z)
            t = t_new
        z = z_new
        if it >= next_polish or gm <= tol * scale:
            next_polish = it + max(50, it // 2)
            res = _polish(z, s, Q, q, x0, HinvEt, C, d, blocks, slices, m_c, tol)
            if res is not None:
                res.iterations = it
                return res
            if gm <= tol * scale:
                best = z
                break
    if best is None:
        best = z
    y_dual = s * best
    x = primal(best)
    return QPResult(x=x, mu=y_dual[:m_c],
                    lambdas=[y_dual[sl] for sl in slices], iterations=it,
                    polished=False,
                    kkt_error=_kkt_error(x, y_dual, C, d, blocks, slices, m_c))


def _power_norm(Q, iters=500):
    v = np.ones(Q.shape[0]) / np.sqrt(Q.shape[0])
    lam = 0.0
    for _ in range(iters):
        w = Q @ v
        lam = np.linalg.norm(w)
        if lam == 0:
            return 0.0
        v = w / lam
    return 1.05 * lam


def _kkt_error(x, y, C, d, blocks, slices, m_c):
    err = 0.0
    if m_c:
        slack = C @ x - d
        err = max(err, float(np.max(slack, initial=0.0)))
        err = max(err, float(np.max(np.abs(y[:m_c] * slack), initial=0.0)))
    for (B, w), sl in zip(blocks, slices):
        lam = y[sl]
        Bx = B @ x
        nb = np.linalg.norm(Bx)
        if nb > 0:
            err = max(err, float(abs(w * nb - lam @ Bx)))
    return err


def _polish(z, s, Q, q, x0, HinvEt, C, d, blocks, slices, m_c, tol):
    y = s * z
    free = []
    fixed = []
    sliding = []
    if m_c:
        free.extend(np.flatnonzero(y[:m_c] > 0.0).tolist())
    for (B, w), sl in zip(blocks, slices):
        slide = np.linalg.norm(y[sl]) >= w * (1.0 - 1e-9)
        sliding.append(slide)
        (fixed if slide else free).extend(range(sl.start, sl.stop))
    free = np.array(free, dtype=int)
    fixed = np.array(fixed, dtype=int)
    y_new = np.zeros_like(y)
    for (B, w), sl, slide in zip(blocks, slices, sliding):
        if slide:
            y_new[sl] = y[sl] * (w / np.linalg.norm(y[sl]))
    multi = any(slide and sl.stop - sl.start > 1 for sl, slide in zip(slices, sliding))
    x = None
    for _ in range(60 if multi else 1):
        if free.size:
            rhs = q[free].copy()
            if fixed.size:
                rhs -= Q[np.ix_(free, fixed)] @ y_new[fixed]
            sol, *_ = np.linalg.lstsq(Q[np.ix_(free, free)], rhs, rcond=None)
            y_new[free] = sol
        x = x0 - HinvEt @ y_new
        if not multi:
            break
        # sliding directions of vector blocks follow the current primal point
        change = 0.0
        for (B, w), sl, slide in zip(blocks, slices, sliding):
            if slide and sl.stop - sl.start > 1:
                Bx = B @ x
                nb = np.linalg.norm(Bx)
                if nb == 0.0:
                    continue
                lam = w * Bx / nb
                change = max(change, np.linalg.norm(lam - y_new[sl]) / w)
                y_new[sl] = lam
        if change < 1e-15:
            break
    else:
        return None

    xscale = 1.0 + np.abs(x).max()
    if m_c:
        if np.any(y_new[:m_c] < -1e-12 * (1.0 + np.abs(y_new).max())):
            return None
        y_new[:m_c] = np.maximum(y_new[:m_c], 0.0)
        feas_tol = 1e-12 * (1.0 + np.abs(d).max() + np.abs(C).max() * xscale)
        if np.any(C @ x - d > feas_tol):
            return None
    for (B, w), sl, slide in zip(blocks, slices, sliding):
        lam = y_new[sl]
        if np.linalg.norm(lam) > w * (1.0 + 1e-10):
            return None
        Bx = B @ x
        nb = np.linalg.norm(Bx)
        bscale = 1e-10 * (1.0 + np.abs(B).max() * xscale)
        if slide:
            if nb > bscale and lam @ Bx < w * nb * (1.0 - 1e-13):
                return None
        elif nb > bscale:
            return None
    return QPResult(x=x, mu=y_new[:m_c], lambdas=[y_new[sl] for sl in slices],
                    polished=True,
                    kkt_error=_kkt_error(x, y_new, C, d, blocks, slices, m_c))
