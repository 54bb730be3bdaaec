"""Random well-posed instances and small oracles shared by the tests."""

import itertools

import numpy as np

from vhisolve.core import (BlockNormFunctional, Box, CompactMap, InnerProductSpace,
                           LinearCoupling, MonotoneOperator, TimeGrid, VHIProblem,
                           VolterraKernel, WholeSpace, ZeroFunctional, ZeroHistory,
                           check_smallness, operator_norm_dual)
from vhisolve.static import StaticInstance


def random_gram(rng, d, lo=0.5, hi=2.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return Q @ np.diag(rng.uniform(lo, hi, d)) @ Q.T


def random_space(rng, d):
    return InnerProductSpace(random_gram(rng, d))


def random_static(rng, d, *, box=True, coupling=0.3, concavity=0.1, weight=None,
                  x_dim=1, uses_history=False):
    """Static instance passing the smallness gate.

    ``coupling`` and ``concavity`` are the fractions of ``m_A`` taken by the
    bifunction constant and by ``m_J |M|^2``, so ``q = coupling + concavity``.
    """
    space = random_space(rng, d)
    R = rng.standard_normal((d, d))
    A = MonotoneOperator.linear(R @ R.T + (1 + 2 * d) * np.eye(d), space)
    x_space = InnerProductSpace.euclidean(x_dim)
    M = CompactMap(rng.standard_normal((x_dim, d)), space, x_space)
    w = rng.uniform(0.2, 1.0) if weight is None else weight
    J = BlockNormFunctional(x_space, [np.eye(x_dim)], [w],
                            concavity=concavity * A.m_A / M.norm ** 2)
    P = rng.standard_normal((d, d))
    P *= coupling * A.m_A / operator_norm_dual(P, space)
    phi = LinearCoupling(d, P=P, L_P=operator_norm_dual(P, space),
                         uses_history=uses_history)
    K = Box(-np.ones(d), np.ones(d)) if box else WholeSpace(d)
    f = rng.uniform(-2, 2, d) * A.m_A
    inst = StaticInstance(space, K, A, phi, J, M, f)
    assert check_smallness(inst).passed
    return inst


def ode_problem(steps, horizon=2.0, quadrature="trapezoid"):
    """``w + int_0^t w = t`` doubled so the operator modulus is 2 and ``q = 1/2``."""
    space = InnerProductSpace.euclidean(1)
    grid = TimeGrid(horizon, steps)
    A = MonotoneOperator.linear(np.array([[2.0]]), space)
    S = VolterraKernel(1, lambda t, s: 2.0, 2.0, quadrature=quadrature)
    f = 2.0 * grid.nodes[:, None]
    return VHIProblem(space=space, grid=grid, K=WholeSpace(1), A=A,
                      phi=LinearCoupling(1), J=ZeroFunctional(1),
                      M=CompactMap.identity(space), S=S, f=f)


def random_problem(rng, d, steps, horizon=1.0, *, box=True, nonsmooth=True,
                   history=True):
    """Time-dependent instance: exponential memory kernel, smooth load."""
    space = random_space(rng, d)
    grid = TimeGrid(horizon, steps)
    R = rng.standard_normal((d, d))
    A = MonotoneOperator.linear(R @ R.T + (1 + 2 * d) * np.eye(d), space)
    if nonsmooth:
        x_space = InnerProductSpace.euclidean(1)
        M = CompactMap(rng.standard_normal((1, d)), space, x_space)
        J = BlockNormFunctional(x_space, [np.eye(1)], [rng.uniform(0.2, 1.0)],
                                concavity=0.1 * A.m_A / M.norm ** 2)
    else:
        M = CompactMap.identity(space)
        J = ZeroFunctional(d)
    P = rng.standard_normal((d, d))
    P *= 0.3 * A.m_A / operator_norm_dual(P, space)
    L_P = operator_norm_dual(P, space)
    phi = LinearCoupling(d, P=P, L_P=L_P, uses_history=True)
    if history:
        Km = rng.standard_normal((d, d))
        Km *= 0.5 * A.m_A / operator_norm_dual(Km, space)
        rate = rng.uniform(0.5, 2.0)
        S = VolterraKernel(d, lambda t, s: np.exp(-rate * (t - np.asarray(s))),
                           operator_norm_dual(Km, space),
                           pointwise=lambda g: np.asarray(g) @ Km.T)
    else:
        S = ZeroHistory(d)
    amp = rng.uniform(-1, 1, d) * A.m_A
    freq = rng.uniform(0.5, 2.0)
    f = amp[None, :] * np.sin(freq * np.pi * grid.nodes)[:, None] + 0.5 * amp[None, :]
    K = Box(-np.ones(d), np.ones(d)) if box else WholeSpace(d)
    problem = VHIProblem(space=space, grid=grid, K=K, A=A, phi=phi, J=J, M=M, S=S, f=f)
    assert check_smallness(problem).passed
    return problem


def smallness_case(rng, label, Mn=None):
    """Constants for the gate with a known outcome; ``label`` is pass or fail."""
    m_A = rng.uniform(0.5, 5.0)
    Mn = rng.uniform(0.2, 3.0) if Mn is None else Mn
    if label:
        budget = m_A * rng.uniform(0.05, 0.95)
        share = rng.uniform(0, 1)
        alpha = budget * share
        m_J = budget * (1 - share) / Mn ** 2
        alpha_A = 2 * m_J * Mn ** 2 * rng.uniform(1.05, 3.0) + 1e-3
    else:
        which = rng.integers(3)
        if which == 0 and rng.uniform() < 0.3:  # equality: the strict inequality fails
            alpha, m_J, alpha_A = m_A, 0.0, 1.0
        elif which == 0:    # monotonicity fails
            share = rng.uniform(0, 1)
            alpha = m_A * rng.uniform(1.01, 3.0) * share
            m_J = m_A * rng.uniform(1.01, 3.0) * (1 - share) / Mn ** 2
            if alpha + m_J * Mn * Mn <= m_A * 1.001:
                alpha = 1.5 * m_A
            alpha_A = 2.0 * m_J * Mn * Mn + 1.0
        elif which == 1:    # coercivity fails
            alpha = 0.1 * m_A
            m_J = 0.4 * m_A / Mn ** 2
            alpha_A = 2.0 * m_J * Mn * Mn * rng.choice([1.0, rng.uniform(0.1, 0.99)])
        else:               # both fail
            alpha = 2.0 * m_A
            m_J = m_A / Mn ** 2
            alpha_A = m_J * Mn ** 2
    return {"m_A": m_A, "alpha_phi": alpha, "m_J": m_J, "M_norm": Mn, "alpha_A": alpha_A}


def active_set_oracle(H, b, C, d):
    """Enumerate active sets; keep the KKT point with feasible primal and dual."""
    n, m = H.shape[0], C.shape[0]
    best = None
    for k in range(0, min(n, m) + 1):
        for act in itertools.combinations(range(m), k):
            act = list(act)
            Ca = C[act]
            kkt = np.block([[H, Ca.T], [Ca, np.zeros((k, k))]])
            rhs = np.concatenate([b, d[act]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            x, lam = sol[:n], sol[n:]
            if np.all(C @ x <= d + 1e-10) and np.all(lam >= -1e-10):
                val = 0.5 * x @ H @ x - b @ x
                if best is None or val < best[1] - 1e-14:
                    best = (x, val)
    return best[0]


def gate_instance(rng, label, d=None):
    """Abstract static instance realizing :func:`smallness_case` constants."""
    d = int(rng.integers(1, 4)) if d is None else d
    space = random_space(rng, d)
    x_dim = int(rng.integers(1, 3))
    M = CompactMap(rng.standard_normal((x_dim, d)), space,
                   InnerProductSpace.euclidean(x_dim))
    c = smallness_case(rng, label, Mn=M.norm)
    A = MonotoneOperator(m_A=c["m_A"], alpha_A=c["alpha_A"], a1=2 * c["m_A"],
                         matrix=c["m_A"] * space.gram)
    P = rng.standard_normal((d, d))
    P *= c["alpha_phi"] / operator_norm_dual(P, space)
    phi = LinearCoupling(d, P=P, L_P=c["alpha_phi"], uses_history=False)
    J = BlockNormFunctional(M.x_space, [np.eye(x_dim)], [1.0], concavity=c["m_J"])
    return StaticInstance(space, Box(-np.ones(d), np.ones(d)), A, phi, J, M, np.zeros(d))
