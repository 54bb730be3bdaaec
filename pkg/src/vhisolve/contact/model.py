"""Quasistatic elastic-viscoplastic frictional contact as a history-dependent inequality.

The unknown is the nodal velocity ``w``.  Strains are stored per element as
``[xx, yy, xy]``; the tensor inner product weights the shear component by 2,
so ``sigma : tau = s^T W t`` with ``W = diag(1, 1, 2)``.  The velocity space
carries the energy inner product ``(eps(u), eps(v))``.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from vhisolve.contact.mesh import GAMMA1, GAMMA2, GAMMA3
from vhisolve.core import (BlockNormFunctional, CompactMap, HistoryOperator,
                           HistorySum, InnerProductSpace, LinearCoupling,
                           MonotoneOperator, Polyhedron, TimeGrid, Trajectory,
                           VHIProblem, WholeSpace, check_smallness,
                           quadrature_weights)
from vhisolve.exceptions import ConfigurationError
from vhisolve.stepper import solve_trajectory

W_TENSOR = np.diag([1.0, 1.0, 2.0])
VARIANTS = ("clamp-only", "literal")


def _iso(a, b):
    """Matrix of ``eps -> a eps + b tr(eps) I`` on ``[xx, yy, xy]`` components."""
    return np.array([[a + b, b, 0.0], [b, a + b, 0.0], [0.0, 0.0, a]])


@dataclass(frozen=True)
class Material:
    """Kelvin-Voigt viscosity, isotropic elasticity and Perzyna-type relaxation.

    Viscosity ``2 theta eps + zeta tr(eps) I``; elasticity ``2 mu eps +
    lam tr(eps) I``; viscoplastic rate ``-k (sigma - r B eps)`` unless a
    custom ``viscoplastic(t, sigma, eps)`` with constant ``L_G`` is given.
    """

    theta: float
    zeta: float
    lam: float
    mu: float
    k: float = 0.0
    r: float = 0.0
    viscoplastic_fn: Optional[Callable] = None
    L_G_custom: Optional[float] = None

    def __post_init__(self):
        for name in ("theta", "mu"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive", field=name)
        for name in ("zeta", "lam", "k", "r"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative", field=name)
        if self.viscoplastic_fn is not None and self.L_G_custom is None:
            raise ConfigurationError("custom viscoplastic law needs L_G", field="L_G")

    @property
    def D_A(self):
        return _iso(2.0 * self.theta, self.zeta)

    @property
    def D_B(self):
        return _iso(2.0 * self.mu, self.lam)

    @property
    def m_A(self):
        return 2.0 * self.theta

    @property
    def alpha_A(self):
        return 2.0 * self.theta

    @property
    def a1(self):
        return 2.0 * self.theta + 2.0 * self.zeta

    @property
    def L_B(self):
        return 2.0 * self.mu + 2.0 * self.lam

    @property
    def L_G(self):
        if self.viscoplastic_fn is not None:
            return float(self.L_G_custom)
        return self.k * max(1.0, self.r * self.L_B)

    def viscosity(self, eps):
        return np.asarray(eps) @ self.D_A.T

    def elasticity(self, eps):
        return np.asarray(eps) @ self.D_B.T

    def viscoplastic(self, t, sigma, eps):
        if self.viscoplastic_fn is not None:
            return np.asarray(self.viscoplastic_fn(t, sigma, eps), dtype=float)
        return -self.k * (np.asarray(sigma) - self.r * self.elasticity(eps))


@dataclass(frozen=True)
class ContactData:
    """Contact, friction and loading data.

    ``gap`` bounds the normal velocity at contact nodes (``inf`` drops the
    constraint); ``memory_kernel(t)`` defaults to ``b0 exp(-b_rate t)``;
    the friction functional is ``friction * |w_tau|``.  Loads are a body
    force ``f0`` and per-side surface tractions, scaled by ``t / T`` when
    ``ramp`` is set.
    """

    c_p: float = 0.0
    gap: float = math.inf
    b0: float = 0.0
    b_rate: float = 0.0
    friction: float = 1.0
    f0: tuple = (0.0, 0.0)
    tractions: dict = field(default_factory=dict)
    ramp: bool = False
    u0: Optional[np.ndarray] = None
    variant: str = "clamp-only"
    memory_kernel: Optional[Callable] = None

    def __post_init__(self):
        if not self.gap > 0:
            raise ConfigurationError("gap must be positive", field="gap")
        for name in ("c_p", "b0", "b_rate", "friction"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative", field=name)
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}", field="variant")

    def b(self, t):
        if self.memory_kernel is not None:
            return np.asarray(self.memory_kernel(t), dtype=float)
        return self.b0 * np.exp(-self.b_rate * np.asarray(t, dtype=float))

    def b_sup(self, horizon, samples=2049):
        t = np.linspace(0.0, horizon, samples)
        return float(np.max(np.abs(self.b(t)))) if samples else 0.0

    def p(self, r):
        return self.c_p * np.maximum(np.asarray(r, dtype=float), 0.0)


@dataclass
class InternalState:
    """Viscoplastic stress ``sigma`` and strain ``strain`` per element at time ``t``."""

    sigma: np.ndarray
    strain: np.ndarray
    t: float = 0.0


def sigma_I_step(state, material, strain_new, dt, *, implicit=False, tol=1e-14,
                 max_iter=200):
    """Advance the viscoplastic stress one step.

    Explicit: ``s_n = s_{n-1} + dt G(t_{n-1}, B e_{n-1} + s_{n-1}, e_{n-1})``.
    Implicit: trapezoid rule, iterated to its fixed point.
    """
    m = material
    g_old = m.viscoplastic(state.t, m.elasticity(state.strain) + state.sigma, state.strain)
    s = state.sigma + dt * g_old
    if implicit:
        t_new = state.t + dt
        for _ in range(max_iter):
            g_new = m.viscoplastic(t_new, m.elasticity(strain_new) + s, strain_new)
            s_next = state.sigma + 0.5 * dt * (g_old + g_new)
            done = np.max(np.abs(s_next - s), initial=0.0) <= tol * (1.0 + np.max(np.abs(s_next), initial=0.0))
            s = s_next
            if done:
                break
    return InternalState(sigma=s, strain=np.array(strain_new, dtype=float), t=state.t + dt)


def displacement_weights(n, dt, rule):
    return quadrature_weights(n, dt, rule)


def cumulative(values, dt, rule):
    """``sum_m q_m values_m`` for every node ``n`` (first axis)."""
    values = np.asarray(values, dtype=float)
    out = np.zeros_like(values)
    if rule == "left":
        out[1:] = dt * np.cumsum(values[:-1], axis=0)
    else:
        out[1:] = 0.5 * dt * np.cumsum(values[:-1] + values[1:], axis=0)
    return out


def reconstruct_displacement(w, u0, rule="trapezoid"):
    """``u(t_n) = u0 + int_0^{t_n} w``; ``u(t_0) = u0`` exactly."""
    u0 = np.asarray(u0, dtype=float)
    vals = u0[None, :] + cumulative(w.values, w.grid.dt, rule)
    vals[0] = u0
    return Trajectory(w.grid, vals)


# --------------------------------------------------------------------------
# history operators of the contact problem


class _ElasticHistory(HistoryOperator):
    kind = "custom"

    def __init__(self, asm, quadrature):
        super().__init__(asm.dim, asm.material.L_B, quadrature)
        self.asm = asm

    def apply(self, values, n, grid):
        u = self.asm.u0 + quadrature_weights(n, grid.dt, self.quadrature) @ values[:n + 1]
        return self.asm.K_B @ u

    def __call__(self, values, grid):
        u = self.asm.u0 + cumulative(values, grid.dt, self.quadrature)
        return u @ self.asm.K_B.T


class _ViscoplasticHistory(HistoryOperator):
    kind = "custom"

    def __init__(self, asm, quadrature, lipschitz):
        super().__init__(asm.dim, lipschitz, quadrature)
        self.asm = asm

    def sigma_sequence(self, values, grid, upto=None):
        asm = self.asm
        n_last = values.shape[0] - 1 if upto is None else upto
        u = asm.u0 + cumulative(values[:n_last + 1], grid.dt, self.quadrature)
        strains = asm.strains(u)
        state = InternalState(np.zeros((asm.n_elements, 3)), strains[0], 0.0)
        out = [state.sigma]
        for m in range(1, n_last + 1):
            state = sigma_I_step(state, asm.material, strains[m], grid.dt)
            out.append(state.sigma)
        return np.array(out)

    def apply(self, values, n, grid):
        if self.asm.material.L_G == 0.0 and self.asm.material.viscoplastic_fn is None:
            return np.zeros(self.dim)
        sig = self.sigma_sequence(values, grid, upto=n)[n]
        return self.asm.stress_load(sig)

    def __call__(self, values, grid):
        values = np.asarray(values, dtype=float)
        if self.asm.material.L_G == 0.0 and self.asm.material.viscoplastic_fn is None:
            return np.zeros_like(values)
        sig = self.sigma_sequence(values, grid)
        return np.array([self.asm.stress_load(s) for s in sig])


class _MemoryHistory(HistoryOperator):
    kind = "custom"

    def __init__(self, asm, quadrature, lipschitz):
        super().__init__(asm.dim, lipschitz, quadrature)
        self.asm = asm

    def memory(self, values, n, grid):
        """Nodal ``int_0^{t_n} b(t_n - s) w_nu^+(s) ds`` on the contact nodes."""
        w = quadrature_weights(n, grid.dt, self.quadrature)
        idx = np.flatnonzero(w)
        if idx.size == 0:
            return np.zeros(self.asm.n_contact)
        t = grid.nodes
        kern = self.asm.contact.b(t[n] - t[idx])
        wn = np.maximum(values[idx] @ self.asm.N.T, 0.0)
        return (w[idx] * np.broadcast_to(kern, idx.shape)) @ wn

    def apply(self, values, n, grid):
        return (self.asm.lengths * self.memory(values, n, grid)) @ self.asm.N

    def __call__(self, values, grid):
        values = np.asarray(values, dtype=float)
        return np.array([self.apply(values, n, grid) for n in range(values.shape[0])])


class _FastSum(HistorySum):
    def __call__(self, values, grid):
        return sum(p(values, grid) for p in self.parts)

    def with_quadrature(self, quadrature):
        return _FastSum([p.with_quadrature(quadrature) for p in self.parts])


# --------------------------------------------------------------------------
# assembly


def _element_strain(p):
    """``(3, 6)`` strain-displacement matrix and area of a P1 triangle."""
    (x1, y1), (x2, y2), (x3, y3) = p
    area2 = (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1)
    b = np.array([y2 - y3, y3 - y1, y1 - y2]) / area2
    c = np.array([x3 - x2, x1 - x3, x2 - x1]) / area2
    E = np.zeros((3, 6))
    E[0, 0::2] = b
    E[1, 1::2] = c
    E[2, 0::2] = 0.5 * c
    E[2, 1::2] = 0.5 * b
    return E, 0.5 * area2


@dataclass
class ContactAssembly:
    """Discrete operators of the contact problem plus the assembled abstract problem."""

    mesh: object
    material: Material
    contact: ContactData
    grid: TimeGrid
    quadrature: str
    free_dofs: np.ndarray
    strain_matrix: np.ndarray
    areas: np.ndarray
    gram: np.ndarray
    K_A: np.ndarray
    K_B: np.ndarray
    contact_nodes: np.ndarray
    lengths: np.ndarray
    normals: np.ndarray
    tangents: np.ndarray
    N: np.ndarray
    T: np.ndarray
    gamma: np.ndarray
    u0: np.ndarray
    f: np.ndarray
    problem: Optional[VHIProblem] = None
    gamma_norm: float = 0.0
    L_P: float = 0.0
    L_S: dict = field(default_factory=dict)
    history_parts: tuple = ()

    @property
    def dim(self):
        return self.free_dofs.size

    @property
    def n_elements(self):
        return self.areas.size

    @property
    def n_contact(self):
        return self.contact_nodes.size

    def strains(self, u):
        """Per-element strains of one vector ``(dim,)`` or a batch ``(n, dim)``."""
        u = np.asarray(u, dtype=float)
        e = u @ self.strain_matrix.T
        return e.reshape(u.shape[:-1] + (self.n_elements, 3))

    def stress_load(self, sigma):
        """Dual vector ``v -> (sigma, eps(v))`` of a per-element stress."""
        s = (np.asarray(sigma) @ W_TENSOR) * self.areas[:, None]
        return s.reshape(-1) @ self.strain_matrix

    def full_field(self, u):
        """Expand free-dof coefficients to all nodes as an ``(n_nodes, 2)`` array."""
        out = np.zeros(2 * self.mesh.n_nodes)
        out[self.free_dofs] = u
        return out.reshape(-1, 2)

    def P(self, u):
        u = np.asarray(u, dtype=float)
        return (self.lengths * self.contact.p(u @ self.N.T)) @ self.N

    def smallness(self):
        gate = {
            "inequality": "m_A > max{1, L_P} + alpha_j*|gamma|^2",
            "L_P": self.L_P,
            "gamma_norm": self.gamma_norm,
            "alpha_j": 0.0,
            "threshold": max(1.0, self.L_P),
        }
        return check_smallness(self.problem, extra={"contact": gate})


def _dof_maps(mesh, variant):
    clamped = set(mesh.tagged_nodes(GAMMA1).tolist())
    contact_nodes = [i for i in mesh.tagged_nodes(GAMMA3).tolist() if i not in clamped]
    dropped = set()
    normals = np.zeros((len(contact_nodes), 2))
    for e, (tag, nu) in enumerate(zip(mesh.edge_tags, mesh.edge_normals)):
        if tag != GAMMA3:
            continue
        for node in mesh.edges[e]:
            if node in contact_nodes:
                normals[contact_nodes.index(node)] += nu
    if contact_nodes:
        normals /= np.linalg.norm(normals, axis=1)[:, None]
    if variant == "literal":
        for node, nu in zip(contact_nodes, normals):
            axis = int(np.argmax(np.abs(nu)))
            if abs(abs(nu[axis]) - 1.0) > 1e-12:
                raise ConfigurationError("the literal variant needs axis-aligned contact "
                                         "normals", field="variant")
            dropped.add(2 * node + axis)
    free = [d for d in range(2 * mesh.n_nodes) if d // 2 not in clamped and d not in dropped]
    return np.array(free, dtype=int), np.array(contact_nodes, dtype=int), normals


def assemble_load(mesh, contact, grid, free_dofs):
    """Nodal load ``(n_steps + 1, dim)`` from body force and Gamma_2 tractions."""
    full = np.zeros(2 * mesh.n_nodes)
    areas = mesh.areas
    f0 = np.asarray(contact.f0, dtype=float)
    for tri, a in zip(mesh.triangles, areas):
        for node in tri:
            full[2 * node:2 * node + 2] += f0 * a / 3.0
    lengths = mesh.edge_lengths()
    for e, (tag, side) in enumerate(zip(mesh.edge_tags, mesh.edge_sides)):
        trac = contact.tractions.get(side)
        if trac is None:
            continue
        if tag != GAMMA2:
            raise ConfigurationError(f"traction on side {side!r} which is not a free "
                                     "traction boundary", field="tractions")
        for node in mesh.edges[e]:
            full[2 * node:2 * node + 2] += np.asarray(trac, dtype=float) * lengths[e] / 2.0
    base = full[free_dofs]
    scale = grid.nodes / grid.horizon if contact.ramp else np.ones(len(grid))
    return scale[:, None] * base[None, :]


def assemble_problem(mesh, material, contact, grid, *, quadrature="trapezoid"):
    """Build the velocity inequality and its discrete operators.

    Returns a :class:`ContactAssembly` whose ``problem`` is the abstract
    instance: energy-inner-product space, viscosity operator, velocity cone
    at contact nodes, trace map, history sum (elastic, viscoplastic and
    memory parts) and the coupling ``<z + P(u), v>``.
    """
    free, cnodes, normals = _dof_maps(mesh, contact.variant)
    if cnodes.size == 0:
        warnings.warn("no contact boundary: the model reduces to unconstrained "
                      "viscoelasticity", RuntimeWarning, stacklevel=2)
    dim = free.size
    if dim == 0:
        raise ConfigurationError("no free degrees of freedom", field="mesh")

    nel = mesh.n_elements
    Bfull = np.zeros((3 * nel, 2 * mesh.n_nodes))
    areas = np.zeros(nel)
    for e, tri in enumerate(mesh.triangles):
        E, a = _element_strain(mesh.nodes[tri])
        if not a > 0:
            raise ConfigurationError("triangle with nonpositive area", field="mesh")
        areas[e] = a
        cols = np.ravel([[2 * n, 2 * n + 1] for n in tri])
        Bfull[3 * e:3 * e + 3, cols] += E
    Bm = Bfull[:, free]

    def weighted(D):
        blk = np.kron(np.diag(areas), W_TENSOR @ D)
        K = Bm.T @ blk @ Bm
        return 0.5 * (K + K.T)

    gram = weighted(np.eye(3))
    K_A = weighted(material.D_A)
    K_B = weighted(material.D_B)

    # contact node bookkeeping
    lengths = np.zeros(cnodes.size)
    elen = mesh.edge_lengths()
    for e, tag in enumerate(mesh.edge_tags):
        if tag != GAMMA3:
            continue
        for node in mesh.edges[e]:
            hit = np.flatnonzero(cnodes == node)
            if hit.size:
                lengths[hit[0]] += 0.5 * elen[e]
    tangents = np.column_stack([-normals[:, 1], normals[:, 0]]) if cnodes.size else normals
    pos = {d: i for i, d in enumerate(free)}
    N = np.zeros((cnodes.size, dim))
    T = np.zeros((cnodes.size, dim))
    x_dofs = []
    for i, node in enumerate(cnodes):
        for c in range(2):
            j = pos.get(2 * node + c)
            if j is None:
                continue
            N[i, j] = normals[i, c]
            T[i, j] = tangents[i, c]
            x_dofs.append((i, j))

    u0 = np.zeros(dim) if contact.u0 is None else np.asarray(contact.u0, dtype=float)
    if u0.shape != (dim,):
        raise ConfigurationError(f"initial displacement has {u0.size} entries, expected "
                                 f"{dim}", field="u0")
    f = assemble_load(mesh, contact, grid, free)

    asm = ContactAssembly(mesh=mesh, material=material, contact=contact, grid=grid,
                          quadrature=quadrature, free_dofs=free, strain_matrix=Bm,
                          areas=areas, gram=gram, K_A=K_A, K_B=K_B, contact_nodes=cnodes,
                          lengths=lengths, normals=normals, tangents=tangents, N=N, T=T,
                          gamma=np.zeros((0, dim)), u0=u0, f=f)

    space = InnerProductSpace(gram)
    if x_dofs:
        gamma = np.zeros((len(x_dofs), dim))
        xw = np.zeros(len(x_dofs))
        for r, (i, j) in enumerate(x_dofs):
            gamma[r, j] = 1.0
            xw[r] = lengths[i]
        x_space = InnerProductSpace(np.diag(xw))
    else:
        gamma = np.zeros((1, dim))
        x_space = InnerProductSpace.euclidean(1)
    asm.gamma = gamma
    M = CompactMap(gamma, space, x_space)
    asm.gamma_norm = M.norm
    asm.L_P = contact.c_p * M.norm ** 2

    A = MonotoneOperator(m_A=material.m_A, alpha_A=material.alpha_A, a1=material.a1,
                         matrix=K_A, a0=lambda t: 0.0, beta=material.a1)

    if cnodes.size and math.isfinite(contact.gap):
        rows = np.flatnonzero(np.any(N != 0, axis=1))
        K = Polyhedron(N[rows], np.full(rows.size, contact.gap), np.zeros(dim))
    else:
        K = WholeSpace(dim)

    # friction: one block per contact node acting on the tangential trace
    blocks, weights = [], []
    if x_dofs and contact.friction > 0:
        Tx = T @ gamma.T
        for i in range(cnodes.size):
            if np.any(Tx[i]):
                blocks.append(Tx[i:i + 1])
                weights.append(lengths[i] * contact.friction)
    J = BlockNormFunctional(x_space, blocks, weights) if blocks else \
        BlockNormFunctional(x_space, [], [])

    phi = LinearCoupling(dim, P=asm.P if contact.c_p > 0 else None, L_P=asm.L_P,
                         uses_history=True)

    L_S1 = material.L_B
    c = material.L_G * (1.0 + material.L_B) * math.exp(material.L_G * grid.horizon)
    L_S2 = c * grid.horizon
    L_S3 = M.norm ** 2 * contact.b_sup(grid.horizon)
    parts = [_ElasticHistory(asm, quadrature),
             _ViscoplasticHistory(asm, quadrature, L_S2),
             _MemoryHistory(asm, quadrature, L_S3)]
    S = _FastSum(parts)
    asm.L_S = {"elastic": L_S1, "viscoplastic": L_S2, "memory": L_S3,
               "total": L_S1 + L_S2 + L_S3, "viscoplastic_c": c}
    asm.history_parts = tuple(parts)
    asm.problem = VHIProblem(space=space, grid=grid, K=K, A=A, phi=phi, J=J, M=M,
                             S=S, f=f)
    return asm


# --------------------------------------------------------------------------
# post-processing


def recover_stress(asm, w_n, u_n, sigma_I_n, t_n=0.0):
    """Per-element ``A eps(w) + B eps(u) + sigma_I``."""
    m = asm.material
    return m.viscosity(asm.strains(w_n)) + m.elasticity(asm.strains(u_n)) + sigma_I_n


@dataclass
class ContactSolution:
    assembly: ContactAssembly
    w: Trajectory
    u: Trajectory
    sigma: np.ndarray
    sigma_I: np.ndarray
    traction: np.ndarray
    memory: np.ndarray
    rule: str
    report: object = None

    @property
    def times(self):
        return self.w.grid.nodes

    def normal_velocity(self, n):
        return self.assembly.N @ self.w.values[n]

    def tangential_velocity(self, n):
        return self.assembly.T @ self.w.values[n]

    def sigma_nu(self, n):
        if self.assembly.contact.variant == "literal":
            # the normal dofs are not unknowns, so no normal reaction is available
            return np.full(self.assembly.n_contact, np.nan)
        return np.einsum("ij,ij->i", self.traction[n], self.assembly.normals)

    def sigma_tau(self, n):
        return np.einsum("ij,ij->i", self.traction[n], self.assembly.tangents)


def _tractions(asm, reaction):
    """Nodal tractions ``(n_contact, 2)`` from a reaction vector on free dofs."""
    full = asm.full_field(reaction)
    out = full[asm.contact_nodes] / asm.lengths[:, None] if asm.n_contact else \
        np.zeros((0, 2))
    return out


def postprocess(asm, w, rule, report=None):
    u = reconstruct_displacement(w, asm.u0, rule)
    vp = asm.history_parts[1].with_quadrature(rule)
    sig_I = vp.sigma_sequence(w.values, w.grid)
    mem_op = asm.history_parts[2].with_quadrature(rule)
    n_steps = len(w.grid)
    sigma = np.array([recover_stress(asm, w.values[n], u.values[n], sig_I[n])
                      for n in range(n_steps)])
    traction = np.zeros((n_steps, asm.n_contact, 2))
    memory = np.zeros((n_steps, asm.n_contact))
    for n in range(n_steps):
        reaction = asm.stress_load(sigma[n]) - asm.f[n]
        traction[n] = _tractions(asm, reaction)
        memory[n] = mem_op.memory(w.values, n, w.grid)
    return ContactSolution(assembly=asm, w=w, u=u, sigma=sigma, sigma_I=sig_I,
                           traction=traction, memory=memory, rule=rule, report=report)


def solve_contact(asm, mode="marching", tol=1e-10, **kw):
    """Solve the assembled problem and recover stresses and contact tractions."""
    w, report = solve_trajectory(asm.problem, mode=mode, tol=tol, **kw)
    rule = "left" if mode == "marching" else asm.quadrature
    return postprocess(asm, w, rule, report)


def contact_residuals(sol, n, tol=1e-8):
    """Per-contact-node law residuals at step ``n``."""
    asm = sol.assembly
    c = asm.contact
    w_nu = sol.normal_velocity(n)
    w_tau = sol.tangential_velocity(n)
    s_nu = sol.sigma_nu(n)
    s_tau = sol.sigma_tau(n)
    p_term = c.p(w_nu)
    mem = sol.memory[n]
    sign = s_nu + p_term + mem
    g = np.full(asm.n_contact, c.gap)
    if math.isfinite(c.gap):
        compl = np.abs((w_nu - g) * sign)
        violation = np.maximum(0.0, w_nu - g)
    else:
        compl = np.abs(sign)
        violation = np.zeros(asm.n_contact)
    sliding = np.abs(w_tau) > tol
    align = np.where(sliding, np.abs(s_tau * w_tau + c.friction * np.abs(w_tau)), 0.0)
    return {
        "node_id": asm.contact_nodes.copy(),
        "w_nu": w_nu, "g": g, "sigma_nu": s_nu, "p_term": p_term, "memory_term": mem,
        "constraint_violation": violation,
        "sign": sign,
        "complementarity": compl,
        "sigma_tau": s_tau,
        "sigma_tau_norm": np.abs(s_tau),
        "friction_excess": np.maximum(0.0, np.abs(s_tau) - c.friction),
        "sliding": sliding,
        "alignment": align,
    }


def divergence_residual(asm, sigma_n, n):
    """Weak equilibrium residual on test functions not supported on the contact nodes.

    Returns ``(max_abs_interior, residual_vector)``.
    """
    r = asm.stress_load(sigma_n) - asm.f[n]
    full = asm.full_field(r)
    mask = np.ones(asm.mesh.n_nodes, dtype=bool)
    mask[asm.contact_nodes] = False
    interior = full[mask]
    return float(np.max(np.abs(interior), initial=0.0)), r
