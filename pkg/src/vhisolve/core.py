"""Domain types shared by every solver.

Finite-dimensional Galerkin images of the spaces ``V`` and ``X`` carry a
Gram matrix; dual elements (``V*``, ``X*``) are coefficient vectors acting by
the plain Euclidean pairing ``<g, v> = g @ v``, so the Riesz map is
``gram^{-1}``.  Every type here is immutable after construction.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh

from vhisolve._qp import solve_qp
from vhisolve.exceptions import (ConfigurationError, GridMismatchError,
                                 ProjectionError)

ALGEBRAIC_TOL = 1e-10
ITERATIVE_TOL = 1e-6


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class InnerProductSpace:
    """``R^dim`` with the inner product ``<u, v> = u^T gram v``."""

    def __init__(self, gram):
        gram = np.atleast_2d(np.asarray(gram, dtype=float))
        if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
            raise ConfigurationError("gram must be a square matrix", field="gram")
        scale = max(np.abs(gram).max(), 1e-300)
        if np.abs(gram - gram.T).max() > 1e-12 * scale:
            raise ConfigurationError("gram must be symmetric", field="gram")
        gram = 0.5 * (gram + gram.T)
        try:
            self._cho = cho_factor(gram)
        except np.linalg.LinAlgError as exc:
            raise ConfigurationError("gram must be positive definite", field="gram") from exc
        self.gram = _frozen(gram)
        self.dim = gram.shape[0]
        self.is_diagonal = bool(np.count_nonzero(gram - np.diag(np.diag(gram))) == 0)

    @classmethod
    def euclidean(cls, dim):
        return cls(np.eye(dim))

    def inner(self, u, v):
        return np.einsum("...i,ij,...j->...", u, self.gram, v)

    def norm(self, u):
        return np.sqrt(np.maximum(self.inner(u, u), 0.0))

    def riesz(self, g):
        """Map a dual coefficient vector to its representer in the space."""
        g = np.asarray(g, dtype=float)
        if g.ndim == 1:
            return cho_solve(self._cho, g)
        return cho_solve(self._cho, g.reshape(-1, self.dim).T).T.reshape(g.shape)

    def to_dual(self, u):
        return np.asarray(u, dtype=float) @ self.gram

    def dual_norm(self, g):
        g = np.asarray(g, dtype=float)
        return np.sqrt(np.maximum(np.einsum("...i,...i->...", g, self.riesz(g)), 0.0))

    @property
    def factor(self):
        return self._cho

    def __eq__(self, other):
        return (isinstance(other, InnerProductSpace) and self.dim == other.dim
                and np.array_equal(self.gram, other.gram))

    def __hash__(self):
        return hash((self.dim, self.gram.tobytes()))

    def __repr__(self):
        return f"InnerProductSpace(dim={self.dim})"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_n = n T / N`` on ``[0, T]``."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ConfigurationError("horizon must be positive", field="horizon")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigurationError("steps must be a positive integer", field="steps")

    @property
    def dt(self):
        return self.horizon / self.steps

    @property
    def nodes(self):
        t = np.arange(self.steps + 1) * (self.horizon / self.steps)
        t[-1] = self.horizon
        return t

    def __len__(self):
        return self.steps + 1


# --------------------------------------------------------------------------
# constraint sets


class ConstraintSet:
    """Nonempty closed convex subset of ``V`` with a stored feasible point."""

    kind = "abstract"

    def __init__(self, feasible_point):
        self.feasible_point = _frozen(feasible_point)
        if not self.contains(self.feasible_point):
            raise ConfigurationError("feasible point violates the constraints",
                                     field="feasible_point")

    def inequalities(self):
        """Return ``(C, d)`` with ``K = {v : C v <= d}``, or None if not polyhedral."""
        return None

    def contains(self, v, tol=ALGEBRAIC_TOL):
        raise NotImplementedError

    def residual(self, v):
        ineq = self.inequalities()
        if ineq is None:
            return 0.0 if self.contains(v) else math.inf
        C, d = ineq
        if C.shape[0] == 0:
            return 0.0
        return float(np.max(np.maximum(C @ v - d, 0.0)))


class WholeSpace(ConstraintSet):
    kind = "whole-space"

    def __init__(self, dim):
        self.dim = dim
        super().__init__(np.zeros(dim))

    def inequalities(self):
        return np.zeros((0, self.dim)), np.zeros(0)

    def contains(self, v, tol=ALGEBRAIC_TOL):
        return bool(np.all(np.isfinite(v)))


class Box(ConstraintSet):
    """Coordinate box ``lower <= v <= upper``; infinite bounds allowed."""

    kind = "box"

    def __init__(self, lower, upper, feasible_point=None):
        self.lower = _frozen(lower)
        self.upper = _frozen(upper)
        if self.lower.shape != self.upper.shape:
            raise ConfigurationError("box bounds have different shapes", field="upper")
        if np.any(self.lower > self.upper):
            raise ConfigurationError("box is empty (lower > upper)", field="lower")
        self.dim = self.lower.shape[0]
        if feasible_point is None:
            feasible_point = np.clip(np.zeros(self.dim), self.lower, self.upper)
        super().__init__(feasible_point)

    @property
    def bounded(self):
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def inequalities(self):
        eye = np.eye(self.dim)
        up = np.isfinite(self.upper)
        lo = np.isfinite(self.lower)
        C = np.vstack([eye[up], -eye[lo]])
        d = np.concatenate([self.upper[up], -self.lower[lo]])
        return C, d

    def contains(self, v, tol=ALGEBRAIC_TOL):
        v = np.asarray(v)
        return bool(np.all(v <= self.upper + tol) and np.all(v >= self.lower - tol))


class Polyhedron(ConstraintSet):
    """Intersection of halfspaces ``c_i^T v <= g_i``."""

    kind = "linear-inequalities"

    def __init__(self, normals, bounds, feasible_point):
        self.C = _frozen(np.atleast_2d(normals))
        self.d = _frozen(np.atleast_1d(bounds))
        if self.C.shape[0] != self.d.shape[0]:
            raise ConfigurationError("one bound per inequality row required", field="bounds")
        self.dim = self.C.shape[1]
        super().__init__(feasible_point)

    def inequalities(self):
        return np.array(self.C), np.array(self.d)

    def contains(self, v, tol=ALGEBRAIC_TOL):
        return bool(np.all(self.C @ np.asarray(v) <= self.d + tol))


class CustomSet(ConstraintSet):
    """Convex set known only through a projection oracle.

    ``projector(v, space)`` must return the ``V``-metric projection; it may be
    iterative and signal trouble by returning non-finite values.
    """

    kind = "custom-projection"

    def __init__(self, projector, contains, feasible_point):
        self._projector = projector
        self._contains = contains
        self.dim = len(feasible_point)
        super().__init__(feasible_point)

    def contains(self, v, tol=ALGEBRAIC_TOL):
        return bool(self._contains(np.asarray(v), tol))

    def project_custom(self, v, space):
        out = np.asarray(self._projector(np.asarray(v, dtype=float), space), dtype=float)
        if out.shape != (self.dim,) or not np.all(np.isfinite(out)):
            raise ProjectionError("custom projection oracle did not converge")
        return out


def project(K, v, space, *, tol=1e-13):
    """Projection of ``v`` onto ``K`` in the norm of ``space``."""
    v = np.asarray(v, dtype=float)
    if isinstance(K, WholeSpace):
        return v.copy()
    if isinstance(K, CustomSet):
        return K.project_custom(v, space)
    if isinstance(K, Box) and space.is_diagonal:
        return np.clip(v, K.lower, K.upper)
    if K.contains(v, tol=0.0):
        return v.copy()
    C, d = K.inequalities()
    res = solve_qp(space.gram, space.gram @ v, C, d, tol=tol, factor=space.factor)
    x = res.x
    if isinstance(K, Box):
        x = np.clip(x, K.lower, K.upper)
    return x


# --------------------------------------------------------------------------
# operators and functionals


def _apply_matrix(matrix, u):
    return np.asarray(u, dtype=float) @ np.asarray(matrix).T


@dataclass(frozen=True)
class MonotoneOperator:
    """Strongly monotone operator ``A(t, .) : V -> V*``.

    ``apply(t, u)`` must accept a trailing-axis batch of vectors.  For affine
    operators pass ``matrix`` (and optionally ``offset(t)``) instead; the
    solver then uses exact quadratic programming when the matrix is symmetric.
    """

    m_A: float
    alpha_A: float
    a1: float
    apply_fn: Optional[Callable] = None
    matrix: Optional[np.ndarray] = None
    offset: Optional[Callable] = None
    a0: Optional[Callable] = None
    beta: float = 0.0
    beta1: Optional[Callable] = None

    def __post_init__(self):
        if self.matrix is not None:
            object.__setattr__(self, "matrix", _frozen(self.matrix))
        if self.apply_fn is None and self.matrix is None:
            raise ConfigurationError("operator needs apply_fn or matrix", field="A")

    def __call__(self, t, u):
        if self.matrix is not None:
            out = _apply_matrix(self.matrix, u)
            if self.offset is not None:
                out = out + self.offset(t)
            return out
        return self.apply_fn(t, np.asarray(u, dtype=float))

    @property
    def is_affine(self):
        return self.matrix is not None

    @property
    def is_symmetric(self):
        if self.matrix is None:
            return False
        M = self.matrix
        return bool(np.abs(M - M.T).max() <= 1e-12 * max(np.abs(M).max(), 1e-300))

    @classmethod
    def linear(cls, matrix, space, offset=None, **overrides):
        """Affine operator with constants computed in the metric of ``space``."""
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        sym = 0.5 * (matrix + matrix.T)
        m_A = float(eigh(sym, space.gram, eigvals_only=True)[0])
        a1 = operator_norm_dual(matrix, space)
        a0 = None
        if offset is not None:
            a0 = lambda t: float(space.dual_norm(offset(t)))  # noqa: E731
        kw = dict(m_A=m_A, alpha_A=m_A, a1=a1, matrix=matrix, offset=offset, a0=a0)
        kw.update(overrides)
        return cls(**kw)


def operator_norm_dual(matrix, space):
    """Norm of a matrix viewed as a map ``V -> V*``."""
    Ginv_M = cho_solve(space.factor, matrix)
    vals = eigh(matrix.T @ Ginv_M, space.gram, eigvals_only=True)
    return float(np.sqrt(max(vals[-1], 0.0)))


def estimate_lipschitz(A, space, t=0.0, samples=1000, seed=0):
    """Lipschitz bound for ``A(t, .)``: ``a1`` if affine, else 1.5x the sampled max."""
    if A.is_affine:
        return float(A.a1)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((samples, space.dim))
    v = rng.standard_normal((samples, space.dim))
    num = space.dual_norm(A(t, u) - A(t, v))
    den = space.norm(u - v)
    ratio = float(np.max(num / np.maximum(den, 1e-300)))
    return 1.5 * ratio


class ConvexBifunction:
    """``phi(z, u, v)``: convex in ``v``, four-point Lipschitz with ``alpha``.

    Subclasses that expose :meth:`structure` are handled exactly by the
    convex subproblem solver; otherwise :meth:`subgrad3` is used as a smooth
    gradient.
    """

    alpha = 0.0
    uses_history = False

    def __call__(self, z, u, v):
        raise NotImplementedError

    def subgrad3(self, z, u, v):
        raise NotImplementedError

    def structure(self, z, u):
        """Return ``(g, blocks)`` with ``phi(z,u,v) = g.v + sum w_i |B_i v| + c``."""
        return None


class ZeroBifunction(ConvexBifunction):
    alpha = 0.0

    def __init__(self, dim):
        self.dim = dim

    def __call__(self, z, u, v):
        return np.zeros(np.shape(v)[:-1])

    def subgrad3(self, z, u, v):
        return np.zeros(self.dim)

    def structure(self, z, u):
        return np.zeros(self.dim), []


class StructuredBifunction(ConvexBifunction):
    """``phi(z, u, v) = <linear(z, u), v> + sum_i weights(z, u)_i ||B_i v||``.

    ``alpha`` must be supplied by the caller; it is not derivable in general.
    """

    def __init__(self, dim, linear=None, blocks=(), weights=None, alpha=0.0,
                 uses_history=False):
        self.dim = dim
        self._linear = linear
        self.blocks = [np.atleast_2d(np.asarray(B, dtype=float)) for B in blocks]
        self._weights = weights
        self.alpha = float(alpha)
        self.uses_history = uses_history

    def linear(self, z, u):
        if self._linear is None:
            return np.zeros(self.dim)
        return np.asarray(self._linear(z, u), dtype=float)

    def weights(self, z, u):
        if not self.blocks:
            return np.zeros(0)
        w = np.asarray(self._weights(z, u), dtype=float)
        if np.any(w < 0):
            raise ValueError("block weights must be nonnegative")
        return w

    def __call__(self, z, u, v):
        v = np.asarray(v, dtype=float)
        val = np.einsum("...i,...i->...", v, self.linear(z, u))
        for B, w in zip(self.blocks, self.weights(z, u)):
            val = val + w * np.linalg.norm(v @ B.T, axis=-1)
        return val

    def subgrad3(self, z, u, v):
        g = self.linear(z, u).copy()
        for B, w in zip(self.blocks, self.weights(z, u)):
            Bv = B @ v
            n = np.linalg.norm(Bv)
            if n > 0:
                g += w * B.T @ (Bv / n)
        return g

    def structure(self, z, u):
        return self.linear(z, u), list(zip(self.blocks, self.weights(z, u)))


class LinearCoupling(StructuredBifunction):
    """``phi(z, u, v) = <z + P(u), v>`` with ``P`` Lipschitz of constant ``L_P``.

    With ``uses_history`` the first slot contributes Lipschitz constant 1,
    so ``alpha = max(1, L_P)``; otherwise ``alpha = L_P``.
    """

    def __init__(self, dim, P=None, L_P=0.0, uses_history=True):
        if P is not None and not callable(P):
            Pm = np.atleast_2d(np.asarray(P, dtype=float))
            P = lambda u, _m=Pm: _apply_matrix(_m, u)  # noqa: E731
        self.P = P
        self.L_P = float(L_P)

        def linear(z, u):
            out = np.zeros(dim) if P is None else np.asarray(P(np.asarray(u, dtype=float)))
            if z is not None and uses_history:
                out = out + z
            return out

        alpha = max(1.0, self.L_P) if uses_history else self.L_P
        super().__init__(dim, linear=linear, alpha=alpha, uses_history=uses_history)

    def __call__(self, z, u, v):
        v = np.asarray(v, dtype=float)
        u = np.asarray(u, dtype=float)
        out = 0.0
        if self.P is not None:
            out = np.einsum("...i,...i->...", np.asarray(self.P(u)), v)
        if z is not None and self.uses_history:
            out = out + np.einsum("...i,...i->...", np.asarray(z), v)
        return out + np.zeros(np.broadcast_shapes(v.shape[:-1], u.shape[:-1]))


class CustomBifunction(ConvexBifunction):
    def __init__(self, fn, subgrad, alpha, uses_history=False):
        self._fn = fn
        self._subgrad = subgrad
        self.alpha = float(alpha)
        self.uses_history = uses_history

    def __call__(self, z, u, v):
        return self._fn(z, u, v)

    def subgrad3(self, z, u, v):
        return np.asarray(self._subgrad(z, u, v), dtype=float)


class NonsmoothFunctional:
    """Locally Lipschitz ``J(t, .) : X -> R`` with Clarke calculus oracles."""

    m_J = 0.0
    c1 = 0.0

    def c0(self, t):
        return 0.0

    def value(self, t, x):
        raise NotImplementedError

    def dirderiv(self, t, x, d):
        raise NotImplementedError

    def select_subgrad(self, t, x):
        raise NotImplementedError

    def split(self, t):
        """Return ``(blocks, concavity)`` with ``J = sum w_i |B_i x| - c/2 |x|_X^2``.

        None when no such splitting is known.
        """
        return None


class ZeroFunctional(NonsmoothFunctional):
    def __init__(self, dim):
        self.dim = dim

    def value(self, t, x):
        return np.zeros(np.shape(x)[:-1])

    def dirderiv(self, t, x, d):
        return np.zeros(np.broadcast_shapes(np.shape(x)[:-1], np.shape(d)[:-1]))

    def select_subgrad(self, t, x):
        return np.zeros(self.dim)

    def split(self, t):
        return [], 0.0


class BlockNormFunctional(NonsmoothFunctional):
    """``J(t, x) = s(t) sum_i w_i ||B_i x||_2 - (m/2) <x, x>_X``.

    With ``m = 0`` this is convex (the friction functional ``||.||`` is the
    single-block case); otherwise it is relaxed monotone with ``m_J = m``.
    Both parts are regular, so the Clarke derivative is the one-sided
    directional derivative.
    """

    def __init__(self, x_space, blocks, weights, concavity=0.0, time_scale=None):
        self.x_space = x_space
        self.dim = x_space.dim
        self.blocks = [np.atleast_2d(np.asarray(B, dtype=float)) for B in blocks]
        self.weights = _frozen(np.broadcast_to(np.asarray(weights, dtype=float),
                                               (len(self.blocks),)))
        if np.any(self.weights < 0):
            raise ConfigurationError("block weights must be nonnegative", field="weights")
        self.concavity = float(concavity)
        if self.concavity < 0:
            raise ConfigurationError("concavity must be nonnegative", field="concavity")
        self.m_J = self.concavity
        self.c1 = self.concavity * float(np.sqrt(np.max(np.linalg.eigvalsh(x_space.gram))))
        # |B_i y| <= block_norms[i] |y|_X
        self.block_norms = _frozen([
            float(np.sqrt(max(eigh(B.T @ B, x_space.gram, eigvals_only=True)[-1], 0.0)))
            for B in self.blocks])
        self.time_scale = time_scale

    @classmethod
    def norm(cls, dim, weight=1.0):
        """``j(xi) = weight * ||xi||`` on Euclidean ``R^dim``."""
        return cls(InnerProductSpace.euclidean(dim), [np.eye(dim)], [weight])

    def scale(self, t):
        return 1.0 if self.time_scale is None else float(self.time_scale(t))

    def c0(self, t):
        s = self.scale(t)
        total = 0.0
        for B, w in zip(self.blocks, self.weights):
            # |B^T xi|_{X*} for |xi| <= 1
            BG = B @ self.x_space.riesz(B.T).T if B.size else B
            total += w * np.sqrt(max(np.linalg.eigvalsh(0.5 * (BG + BG.T))[-1], 0.0))
        return s * total

    def value(self, t, x):
        x = np.asarray(x, dtype=float)
        s = self.scale(t)
        val = np.zeros(x.shape[:-1])
        for B, w in zip(self.blocks, self.weights):
            val = val + s * w * np.linalg.norm(x @ B.T, axis=-1)
        if self.concavity:
            val = val - 0.5 * self.concavity * self.x_space.inner(x, x)
        return val

    def dirderiv(self, t, x, d, radius=0.0):
        """Clarke derivative; with ``radius > 0`` the sup over the ``X``-ball around ``x``.

        The enlarged value bounds the Clarke derivative at every point within
        ``radius``, which keeps kinks visible to lattice searches.
        """
        x = np.asarray(x, dtype=float)
        d = np.asarray(d, dtype=float)
        s = self.scale(t)
        out = np.zeros(np.broadcast_shapes(x.shape[:-1], d.shape[:-1]))
        for B, w, bn in zip(self.blocks, self.weights, self.block_norms):
            Bx = x @ B.T
            Bd = d @ B.T
            nx = np.linalg.norm(Bx, axis=-1)
            nd = np.linalg.norm(Bd, axis=-1)
            kink = nx <= radius * bn
            safe = np.where(kink, 1.0, nx)
            smooth = np.einsum("...i,...i->...", Bx, Bd) / safe
            if radius > 0 and B.shape[0] > 1:
                # sup of y.Bd/|y| over |y - Bx| <= r, |Bx| > r
                r = radius * bn
                cos = np.clip(smooth / np.where(nd > 0, nd, 1.0), -1.0, 1.0)
                sin_max = r / safe
                ang = np.arccos(cos) - np.arcsin(np.clip(sin_max, 0.0, 1.0))
                smooth = nd * np.cos(np.maximum(ang, 0.0))
            out = out + s * w * np.where(kink, nd, smooth)
        if self.concavity:
            out = out - self.concavity * self.x_space.inner(x, d)
        return out

    def select_subgrad(self, t, x):
        """Minimal ``X*``-norm element of the Clarke subdifferential."""
        x = np.asarray(x, dtype=float)
        s = self.scale(t)
        base = np.zeros(self.dim)
        if self.concavity:
            base -= self.concavity * self.x_space.to_dual(x)
        zero_blocks = []
        for B, w in zip(self.blocks, self.weights):
            Bx = B @ x
            n = np.linalg.norm(Bx)
            if n > 0:
                base += s * w * B.T @ (Bx / n)
            elif s * w > 0:
                zero_blocks.append((B, s * w))
        if not zero_blocks:
            return base
        # min |base + sum B_i^T xi_i|_{X*} over |xi_i| <= w_i, solved as the
        # dual of min 1/2 y^T G y + base.y + sum w_i |B_i y|
        res = solve_qp(self.x_space.gram, -base, blocks=zero_blocks, tol=1e-15,
                       factor=self.x_space.factor)
        return -self.x_space.to_dual(res.x)

    def split(self, t):
        s = self.scale(t)
        return [(B, s * w) for B, w in zip(self.blocks, self.weights)], self.concavity


class CustomFunctional(NonsmoothFunctional):
    """User-supplied oracles; trusted to be Clarke regular."""

    def __init__(self, value, dirderiv, subgrad, m_J=0.0, c0=0.0, c1=0.0):
        self._value = value
        self._dirderiv = dirderiv
        self._subgrad = subgrad
        self.m_J = float(m_J)
        self._c0 = c0
        self.c1 = float(c1)

    def c0(self, t):
        return float(self._c0(t)) if callable(self._c0) else float(self._c0)

    def value(self, t, x):
        return self._value(t, x)

    def dirderiv(self, t, x, d):
        return self._dirderiv(t, x, d)

    def select_subgrad(self, t, x):
        return self._subgrad(t, x)


def clarke_dd(J, t, x, d, radius=0.0):
    """Generalized directional derivative ``J^0(t, x; d)``.

    A positive ``radius`` requests the sup over the ``X``-ball around ``x``
    where the functional supports it (block norms); others ignore it.
    """
    if radius > 0 and isinstance(J, BlockNormFunctional):
        val = np.asarray(J.dirderiv(t, x, d, radius=radius), dtype=float)
    else:
        val = np.asarray(J.dirderiv(t, x, d), dtype=float)
    if np.any(np.isnan(val)):
        raise ValueError("directional derivative oracle returned NaN")
    return val if val.ndim else float(val)


def select_subgrad(J, t, x):
    """Deterministic element (minimal norm for built-ins) of ``dJ(t, x)``."""
    z = np.asarray(J.select_subgrad(t, x), dtype=float)
    if np.any(np.isnan(z)):
        raise ValueError("subgradient oracle returned NaN")
    return z


# --------------------------------------------------------------------------
# compact map and its norm


def operator_norm(matrix, space_v, space_x, *, return_vector=False, max_iter=5000,
                  rtol=1e-13):
    """Norm of ``M : V -> X`` between Gram-normed spaces.

    Power iteration on ``G_V^{-1} M^T G_X M``; falls back to a dense
    generalized eigensolve when the iteration stalls.
    """
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    if M.shape != (space_x.dim, space_v.dim):
        raise ConfigurationError(f"map has shape {M.shape}, expected "
                                 f"{(space_x.dim, space_v.dim)}", field="M")
    H = M.T @ space_x.gram @ M
    if not np.any(H):
        vec = np.zeros(space_v.dim)
        vec[0] = 1.0 / space_v.norm(np.eye(space_v.dim)[0])
        return (0.0, vec) if return_vector else 0.0

    rng = np.random.default_rng(12345)
    v = rng.standard_normal(space_v.dim)
    v /= space_v.norm(v)
    lam = 0.0
    converged = False
    for _ in range(max_iter):
        w = space_v.riesz(H @ v)
        lam_new = float(v @ H @ v)
        nw = space_v.norm(w)
        if nw == 0:
            break
        v = w / nw
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            lam = float(v @ H @ v)
            converged = True
            break
        lam = lam_new
    if not converged:
        vals, vecs = eigh(H, space_v.gram)
        lam = float(vals[-1])
        v = vecs[:, -1] / space_v.norm(vecs[:, -1])
    nrm = float(np.sqrt(max(lam, 0.0)))
    return (nrm, v) if return_vector else nrm


class CompactMap:
    """Linear ``M : V -> X`` stored as a matrix, with its operator norm."""

    def __init__(self, matrix, v_space, x_space):
        self.matrix = _frozen(np.atleast_2d(matrix))
        self.v_space = v_space
        self.x_space = x_space
        self.norm, self.maximizer = operator_norm(self.matrix, v_space, x_space,
                                                  return_vector=True)

    @classmethod
    def identity(cls, space):
        return cls(np.eye(space.dim), space, space)

    def __call__(self, v):
        return _apply_matrix(self.matrix, v)

    def adjoint(self, zeta):
        """``M^T`` acting on an ``X*`` coefficient vector."""
        return np.asarray(zeta) @ self.matrix


# --------------------------------------------------------------------------
# history operators

QUADRATURES = ("left", "trapezoid")


def _check_quadrature(q):
    if q not in QUADRATURES:
        raise ConfigurationError(f"unknown quadrature {q!r}", field="quadrature")
    return q


class HistoryOperator:
    """Causal operator ``S``: value at ``t_n`` uses the trajectory up to ``t_n``.

    With left-rectangle quadrature the value at ``t_n`` depends only on the
    samples at ``t_0 .. t_{n-1}``.
    """

    kind = "abstract"
    lipschitz = 0.0
    quadrature = "trapezoid"
    grid = None

    def __init__(self, dim, lipschitz=0.0, quadrature="trapezoid", grid=None):
        self.dim = dim
        self.lipschitz = float(lipschitz)
        self.quadrature = _check_quadrature(quadrature)
        self.grid = grid

    def apply(self, values, n, grid):
        raise NotImplementedError

    def with_quadrature(self, quadrature):
        import copy
        other = copy.copy(self)
        other.quadrature = _check_quadrature(quadrature)
        return other

    def __call__(self, trajectory_values, grid):
        values = np.asarray(trajectory_values, dtype=float)
        return np.array([self.apply(values, n, grid) for n in range(values.shape[0])])


class ZeroHistory(HistoryOperator):
    kind = "zero"

    def apply(self, values, n, grid):
        return np.zeros(self.dim)


def quadrature_weights(n, dt, rule):
    """Weights of the samples ``0..n`` approximating ``int_0^{t_n}``."""
    w = np.zeros(n + 1)
    if n == 0:
        return w
    if rule == "left":
        w[:n] = dt
    else:
        w[:] = dt
        w[0] = w[n] = 0.5 * dt
    return w


class VolterraKernel(HistoryOperator):
    """``(S u)(t) = offset(t) + int_0^t k(t, s) g(u(s)) ds``.

    ``kernel(t, s)`` returns a scalar or a ``(dim, dim_in)`` matrix;
    ``pointwise`` (default identity) must be Lipschitz, and ``lipschitz``
    must bound ``sup |k| * Lip(g)`` in the ``V -> V*`` sense.
    """

    kind = "volterra-kernel"

    def __init__(self, dim, kernel, lipschitz, quadrature="trapezoid",
                 pointwise=None, offset=None, grid=None):
        super().__init__(dim, lipschitz, quadrature, grid)
        self.kernel = kernel
        self.pointwise = pointwise
        self.offset = offset

    def apply(self, values, n, grid):
        t = grid.nodes
        out = np.zeros(self.dim) if self.offset is None else np.array(self.offset(t[n]), dtype=float)
        w = quadrature_weights(n, grid.dt, self.quadrature)
        idx = np.flatnonzero(w)
        if idx.size == 0:
            return out
        try:
            return out + self._batched(values, n, t, w, idx)
        except (ValueError, TypeError, IndexError):
            pass
        for m in idx:
            g = values[m] if self.pointwise is None else self.pointwise(values[m])
            k = self.kernel(t[n], t[m])
            out = out + w[m] * (k * g if np.ndim(k) == 0 else np.asarray(k) @ g)
        return out

    def _batched(self, values, n, t, w, idx):
        g = values[idx]
        if self.pointwise is not None:
            g = np.asarray(self.pointwise(g), dtype=float)
            if g.shape != (idx.size, values.shape[1]):
                raise ValueError("pointwise map is not vectorized")
        k = np.asarray(self.kernel(t[n], t[idx]), dtype=float)
        if k.ndim == 0:
            return float(k) * (w[idx] @ g)
        if k.shape == (idx.size,):
            return (w[idx] * k) @ g
        if k.ndim == 3 and k.shape[0] == idx.size:
            return np.einsum("m,mij,mj->i", w[idx], k, g)
        raise ValueError("kernel output has an unexpected shape")


class HistorySum(HistoryOperator):
    kind = "sum"

    def __init__(self, parts):
        parts = list(parts)
        dims = {p.dim for p in parts}
        if len(dims) != 1:
            raise GridMismatchError("history operators act on different dimensions")
        grids = {id(p.grid): p.grid for p in parts if p.grid is not None}
        gl = list(grids.values())
        if any(g != gl[0] for g in gl[1:]):
            raise GridMismatchError("history operators are bound to different grids")
        quads = {p.quadrature for p in parts}
        quad = quads.pop() if len(quads) == 1 else "trapezoid"
        super().__init__(parts[0].dim, sum(p.lipschitz for p in parts), quad,
                         gl[0] if gl else None)
        self.parts = parts

    def with_quadrature(self, quadrature):
        return HistorySum([p.with_quadrature(quadrature) for p in self.parts])

    def apply(self, values, n, grid):
        out = np.zeros(self.dim)
        for p in self.parts:
            out = out + p.apply(values, n, grid)
        return out


class CustomHistory(HistoryOperator):
    """``fn(values, n, grid, quadrature) -> vector``; caller guarantees causality."""

    kind = "custom"

    def __init__(self, dim, fn, lipschitz, quadrature="trapezoid", grid=None):
        super().__init__(dim, lipschitz, quadrature, grid)
        self.fn = fn

    def apply(self, values, n, grid):
        return np.asarray(self.fn(values, n, grid, self.quadrature), dtype=float)


def history_sum(S1, S2):
    """Pointwise sum of two history operators; Lipschitz constants add."""
    if S1.grid is not None and S2.grid is not None and S1.grid != S2.grid:
        raise GridMismatchError("history operators are bound to different grids")
    return HistorySum([S1, S2])


def volterra_apply(S, u, n):
    """Value of ``S u`` at node ``n`` for a :class:`Trajectory` ``u``."""
    if S.grid is not None and S.grid != u.grid:
        raise GridMismatchError("trajectory grid differs from the operator grid")
    if n == 0 and S.kind in ("volterra-kernel",) and S.offset is None:
        return np.zeros(S.dim)
    return S.apply(u.values, n, u.grid)


@dataclass(frozen=True)
class Trajectory:
    """One vector per node of ``grid``."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        if vals.shape[0] != len(self.grid):
            raise GridMismatchError(f"trajectory has {vals.shape[0]} samples for "
                                    f"{len(self.grid)} grid nodes")
        if not np.all(np.isfinite(vals)):
            raise ValueError("trajectory contains non-finite values")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def times(self):
        return self.grid.nodes

    def sup_distance(self, other, norm):
        return float(np.max(norm(self.values - other.values)))

    def l2_distance(self, other, norm):
        d = norm(self.values - other.values) ** 2
        w = quadrature_weights(self.grid.steps, self.grid.dt, "trapezoid")
        return float(np.sqrt(d @ w))


# --------------------------------------------------------------------------
# problem bundle and the smallness gate


@dataclass(frozen=True)
class VHIProblem:
    space: InnerProductSpace
    grid: TimeGrid
    K: ConstraintSet
    A: MonotoneOperator
    phi: ConvexBifunction
    J: NonsmoothFunctional
    M: CompactMap
    S: HistoryOperator
    f: np.ndarray

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.f, dtype=float))
        if f.shape != (len(self.grid), self.space.dim):
            raise ConfigurationError(f"load has shape {f.shape}, expected "
                                     f"{(len(self.grid), self.space.dim)}", field="f")
        object.__setattr__(self, "f", _frozen(f))
        if self.K.feasible_point.shape != (self.space.dim,):
            raise ConfigurationError("feasible point has the wrong dimension", field="K")

    def static_instance(self, n, eta=None):
        from vhisolve.static import StaticInstance
        return StaticInstance(space=self.space, K=self.K, A=self.A, phi=self.phi,
                              J=self.J, M=self.M, f=self.f[n], t=float(self.grid.nodes[n]),
                              z=eta)


@dataclass(frozen=True)
class WellPosednessReport:
    m_A: float
    alpha_phi: float
    m_J: float
    M_norm: float
    alpha_A: float
    monotonicity_margin: float
    coercivity_margin: float
    q: float
    c: float
    L_S: Optional[float] = None
    failing: tuple = ()
    extra: dict = field(default_factory=dict)

    @property
    def monotonicity_ok(self):
        return self.monotonicity_margin > 0

    @property
    def coercivity_ok(self):
        return self.coercivity_margin > 0

    @property
    def passed(self):
        return self.monotonicity_ok and self.coercivity_ok

    def to_dict(self):
        out = {
            "m_A": self.m_A, "alpha_phi": self.alpha_phi, "m_J": self.m_J,
            "M_norm": self.M_norm, "alpha_A": self.alpha_A,
            "monotonicity": {"inequality": "m_A > alpha_phi + m_J*|M|^2",
                             "margin": self.monotonicity_margin,
                             "ok": self.monotonicity_ok},
            "coercivity": {"inequality": "alpha_A > 2*m_J*|M|^2",
                           "margin": self.coercivity_margin,
                           "ok": self.coercivity_ok},
            "contraction_rate": self.q,
            "continuity_constant": self.c if math.isfinite(self.c) else None,
            "history_lipschitz": self.L_S,
            "pass": self.passed,
            "failing": list(self.failing),
        }
        out.update(self.extra)
        return out


_CONSTANTS = ("m_A", "alpha_phi", "m_J", "M_norm", "alpha_A")


def smallness_constants(obj):
    """Collect the constants entering the smallness conditions."""
    if isinstance(obj, dict):
        return {k: obj.get(k) for k in _CONSTANTS}
    return {"m_A": obj.A.m_A, "alpha_phi": obj.phi.alpha, "m_J": obj.J.m_J,
            "M_norm": obj.M.norm, "alpha_A": obj.A.alpha_A}


def check_smallness(obj, extra=None):
    """Evaluate the strict smallness inequalities for a problem or a constant dict.

    Returns a :class:`WellPosednessReport` whose ``passed`` is the
    conjunction of ``m_A > alpha_phi + m_J |M|^2`` and
    ``alpha_A > 2 m_J |M|^2``; ``q`` is the contraction rate of the
    successive-approximation map and ``c`` the continuous-dependence
    constant.
    """
    consts = smallness_constants(obj)
    for name in _CONSTANTS:
        val = consts[name]
        if val is None or not isinstance(val, (int, float, np.floating, np.integer)) \
                or not math.isfinite(float(val)):
            raise ConfigurationError("missing smallness constant", field=name)
    m_A, alpha, m_J, Mn, alpha_A = (float(consts[k]) for k in _CONSTANTS)
    if m_A <= 0:
        raise ConfigurationError("m_A must be positive", field="m_A")
    coupling = alpha + m_J * Mn * Mn
    mono = m_A - coupling
    coer = alpha_A - 2.0 * m_J * Mn * Mn
    failing = []
    if not mono > 0:
        failing.append("monotonicity")
    if not coer > 0:
        failing.append("coercivity")
    q = coupling / m_A
    c = 1.0 / mono if mono > 0 else math.inf
    L_S = None
    if not isinstance(obj, dict) and getattr(obj, "S", None) is not None:
        L_S = float(obj.S.lipschitz)
    return WellPosednessReport(m_A=m_A, alpha_phi=alpha, m_J=m_J, M_norm=Mn,
                               alpha_A=alpha_A, monotonicity_margin=mono,
                               coercivity_margin=coer, q=q, c=c, L_S=L_S,
                               failing=tuple(failing), extra=dict(extra or {}))


def sample_monotonicity(A, space, t=0.0, samples=200, seed=0):
    """Smallest observed ``<A u - A v, u - v> / |u - v|^2`` on random pairs."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((samples, space.dim))
    v = rng.standard_normal((samples, space.dim))
    num = np.einsum("ij,ij->i", A(t, u) - A(t, v), u - v)
    return float(np.min(num / space.inner(u - v, u - v)))


def sample_relaxed_monotonicity(J, x_space, t=0.0, samples=200, seed=0, scale=1.0):
    """Largest observed ``(J0(x;y-x) + J0(y;x-y)) / |x - y|_X^2``."""
    rng = np.random.default_rng(seed)
    x = scale * rng.standard_normal((samples, x_space.dim))
    y = scale * rng.standard_normal((samples, x_space.dim))
    s = J.dirderiv(t, x, y - x) + J.dirderiv(t, y, x - y)
    return float(np.max(s / x_space.inner(x - y, x - y)))


def four_point_gap(phi, space, samples=200, seed=0, dual_norm=None):
    """Largest observed ratio of the four-point expression to its bound factors."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    dim = space.dim
    for _ in range(samples):
        z1, z2, u1, u2, v1, v2 = rng.standard_normal((6, dim))
        lhs = (phi(z1, u1, v2) - phi(z1, u1, v1) + phi(z2, u2, v1) - phi(z2, u2, v2))
        du = space.norm(u1 - u2)
        dz = space.dual_norm(z1 - z2) if phi.uses_history else 0.0
        rhs = (du + dz) * space.norm(v1 - v2)
        if rhs > 0:
            worst = max(worst, float(lhs) / rhs)
    return worst
