import csv
import math
import warnings

import numpy as np
import pytest
import scipy.linalg
import sympy as sp
from hypothesis import given, settings, strategies as st

from vhisolve.contact import (ContactData, InternalState, Material, assemble_problem,
                              build_mesh, contact_residuals, divergence_residual,
                              recover_stress, reconstruct_displacement, sigma_I_step,
                              solve_contact)
from vhisolve.contact.export import (TRACE_COLUMNS, residual_summary, write_snapshots,
                                     write_trace_csv)
from vhisolve.contact.model import W_TENSOR, _element_strain
from vhisolve.core import TimeGrid, Trajectory
from vhisolve.exceptions import ConfigurationError

MAT = Material(theta=1.0, zeta=0.5, lam=1.0, mu=1.0, k=1.0)


def small_case(steps=6, **contact):
    kw = dict(c_p=0.05, gap=0.05, b0=0.5, b_rate=1.0, friction=1.0,
              tractions={"top": (2.5, -1.0)})
    kw.update(contact)
    mesh = build_mesh(2.0, 1.0, 4, 2)
    return assemble_problem(mesh, MAT, ContactData(**kw), TimeGrid(0.25, steps))


def h_norm(asm, s):
    return math.sqrt(float(np.sum(asm.areas * np.einsum("ei,ij,ej->e", s, W_TENSOR, s))))


# --------------------------------------------------------------------------
# mesh


def test_unit_square_single_cell():
    mesh = build_mesh(1.0, 1.0, 1, 1)
    assert mesh.n_elements == 4
    assert mesh.areas.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(mesh.areas > 0)


@pytest.mark.parametrize("w,h,nx,ny", [(2.0, 1.0, 8, 4), (0.3, 1.7, 3, 5), (1.0, 1.0, 1, 7)])
def test_mesh_counts(w, h, nx, ny):
    mesh = build_mesh(w, h, nx, ny)
    assert mesh.areas.sum() == pytest.approx(w * h, abs=1e-12)
    assert len(mesh.edges) == 2 * (nx + ny)
    assert mesh.edge_lengths().sum() == pytest.approx(2 * (w + h), abs=1e-12)
    np.testing.assert_allclose(np.linalg.norm(mesh.edge_normals, axis=1), 1.0)
    assert mesh.measure("gamma1") == pytest.approx(h)
    assert mesh.measure("gamma3") == pytest.approx(w)


def test_mesh_errors():
    with pytest.raises(ConfigurationError):
        build_mesh(0.0, 1.0, 2, 2)
    with pytest.raises(ConfigurationError):
        build_mesh(1.0, 1.0, 0, 2)
    with pytest.raises(ConfigurationError):
        build_mesh(1.0, 1.0, 2, 2, tags={"left": "gamma2"})


# --------------------------------------------------------------------------
# assembly


def symbolic_element_matrix(p, lam, mu):
    """Plane-strain stiffness of a P1 triangle by symbolic integration."""
    x, y = sp.symbols("x y")
    (x1, y1), (x2, y2), (x3, y3) = [(sp.Rational(a).limit_denominator(10 ** 6),
                                     sp.Rational(b).limit_denominator(10 ** 6)) for a, b in p]
    # barycentric shape functions
    A = sp.Matrix([[1, x1, y1], [1, x2, y2], [1, x3, y3]])
    coeffs = A.inv()
    shapes = [coeffs[0, i] + coeffs[1, i] * x + coeffs[2, i] * y for i in range(3)]
    q = sp.symbols("q0:6")
    ux = sum(q[2 * i] * shapes[i] for i in range(3))
    uy = sum(q[2 * i + 1] * shapes[i] for i in range(3))
    exx, eyy = sp.diff(ux, x), sp.diff(uy, y)
    exy = (sp.diff(ux, y) + sp.diff(uy, x)) / 2
    tr = exx + eyy
    energy_density = lam * tr ** 2 / 2 + mu * (exx ** 2 + eyy ** 2 + 2 * exy ** 2)
    # integrate over the triangle via the affine map from the reference element
    s, t = sp.symbols("s t")
    jac = abs((x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1))
    sub = {x: x1 + s * (x2 - x1) + t * (x3 - x1), y: y1 + s * (y2 - y1) + t * (y3 - y1)}
    E = sp.integrate(sp.integrate(energy_density.subs(sub) * jac, (t, 0, 1 - s)), (s, 0, 1))
    H = sp.hessian(E, q)
    return np.array(H.tolist(), dtype=float)


def test_element_stiffness_matches_symbolic():
    p = np.array([[0.0, 0.0], [1.0, 0.2], [0.3, 0.9]])
    lam, mu = 1.3, 0.7
    E, area = _element_strain(p)
    m = Material(theta=1.0, zeta=0.0, lam=lam, mu=mu)
    ours = area * E.T @ W_TENSOR @ m.D_B @ E
    np.testing.assert_allclose(ours, symbolic_element_matrix(p, lam, mu), atol=1e-12)


def test_assembled_stiffness_matches_symbolic():
    mesh = build_mesh(1.0, 1.0, 1, 1)
    m = Material(theta=1.0, zeta=0.0, lam=2.0, mu=0.5)
    asm = assemble_problem(mesh, m, ContactData(), TimeGrid(1.0, 1))
    full = np.zeros((2 * mesh.n_nodes, 2 * mesh.n_nodes))
    for tri in mesh.triangles:
        Ke = symbolic_element_matrix(mesh.nodes[tri], 2.0, 0.5)
        dofs = np.ravel([[2 * n, 2 * n + 1] for n in tri])
        full[np.ix_(dofs, dofs)] += Ke
    f = asm.free_dofs
    np.testing.assert_allclose(asm.K_B, full[np.ix_(f, f)], atol=1e-12)


def test_trace_norm_matches_generalized_eigensolve():
    asm = assemble_problem(build_mesh(2.0, 1.0, 8, 4), MAT, ContactData(), TimeGrid(1.0, 1))
    # trace rows pick one dof of a contact node; weight by the node's lumped length
    nodes = asm.free_dofs[np.argmax(asm.gamma, axis=1)] // 2
    lumped = {n: asm.lengths[i] for i, n in enumerate(asm.contact_nodes)}
    Wx = np.diag([lumped[n] for n in nodes])
    evals = scipy.linalg.eigh(asm.gamma.T @ Wx @ asm.gamma, asm.gram, eigvals_only=True)
    assert asm.gamma_norm == pytest.approx(math.sqrt(evals[-1]), rel=1e-9)


def test_velocity_space_excludes_clamp():
    mesh = build_mesh(2.0, 1.0, 4, 2)
    asm = assemble_problem(mesh, MAT, ContactData(), TimeGrid(1.0, 1))
    clamped = mesh.tagged_nodes("gamma1")
    assert not set(asm.free_dofs // 2) & set(clamped.tolist())
    assert asm.dim == 2 * (mesh.n_nodes - clamped.size)
    assert np.all(np.linalg.eigvalsh(asm.gram) > 0)


def test_literal_variant_drops_normal_dofs():
    mesh = build_mesh(2.0, 1.0, 4, 2)
    lit = assemble_problem(mesh, MAT, ContactData(variant="literal"), TimeGrid(1.0, 1))
    base = assemble_problem(mesh, MAT, ContactData(), TimeGrid(1.0, 1))
    assert base.dim - lit.dim == base.n_contact
    assert not np.any(lit.N)


def test_empty_contact_boundary_warns():
    mesh = build_mesh(1.0, 1.0, 2, 2, tags={"bottom": "gamma2"})
    with pytest.warns(RuntimeWarning, match="no contact"):
        asm = assemble_problem(mesh, MAT, ContactData(), TimeGrid(1.0, 2))
    assert asm.n_contact == 0


def test_zero_load_null_solution():
    asm = small_case(steps=4, b0=0.0, tractions={})
    assert not np.any(asm.f)
    sol = solve_contact(asm, tol=1e-12)
    assert np.max(np.abs(sol.w.values)) == 0.0
    for n in range(len(sol.times)):
        r = contact_residuals(sol, n)
        for key in ("constraint_violation", "complementarity", "alignment",
                    "sigma_tau_norm"):
            assert np.max(np.abs(r[key])) == 0.0
    assert divergence_residual(asm, sol.sigma[-1], 4)[0] == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_normal_response_lipschitz(seed):
    asm = small_case(c_p=0.07)
    rng = np.random.default_rng(seed)
    u, v = rng.standard_normal((2, asm.dim))
    space = asm.problem.space
    lhs = space.dual_norm(asm.P(u) - asm.P(v))
    assert lhs <= asm.L_P * space.norm(u - v) * (1 + 1e-12)
    assert asm.L_P == pytest.approx(0.07 * asm.gamma_norm ** 2)


@pytest.mark.parametrize("theta,c_p", [(0.5, 0.0), (0.6, 0.0), (0.6, 0.06), (2.0, 0.06),
                                       (0.4, 0.01)])
def test_gate_is_the_contact_inequality(theta, c_p):
    m = Material(theta=theta, zeta=0.5, lam=1.0, mu=1.0, k=1.0)
    asm = assemble_problem(build_mesh(2.0, 1.0, 8, 4), m, ContactData(c_p=c_p),
                           TimeGrid(1.0, 1))
    rep = asm.smallness()
    L_P = c_p * asm.gamma_norm ** 2
    assert rep.passed == (2 * theta > max(1.0, L_P))
    gate = rep.extra["contact"]
    assert gate["inequality"] == "m_A > max{1, L_P} + alpha_j*|gamma|^2"
    assert gate["threshold"] == pytest.approx(max(1.0, L_P))


def test_operator_consistency_with_stress():
    asm = small_case(steps=8, b0=0.0)
    grid = asm.grid
    rng = np.random.default_rng(2)
    W = rng.standard_normal((len(grid), asm.dim))
    S = asm.problem.S(W, grid)
    u = reconstruct_displacement(Trajectory(grid, W), asm.u0, asm.quadrature)
    sig_I = asm.history_parts[1].sigma_sequence(W, grid)
    for n in (0, 3, 8):
        sigma = recover_stress(asm, W[n], u.values[n], sig_I[n])
        v = rng.standard_normal(asm.dim)
        lhs = v @ (asm.K_A @ W[n] + S[n])
        rhs = float(np.sum(asm.areas * np.einsum("ei,ij,ej->e", sigma, W_TENSOR,
                                                 asm.strains(v))))
        assert lhs == pytest.approx(rhs, abs=1e-8 * (1 + abs(rhs)))


# --------------------------------------------------------------------------
# viscoplastic stress and displacement


def test_sigma_I_zero_law():
    m = Material(theta=1.0, zeta=0.0, lam=1.0, mu=1.0, k=0.0)
    s = InternalState(np.zeros((3, 3)), np.ones((3, 3)))
    for _ in range(5):
        s = sigma_I_step(s, m, np.ones((3, 3)), 0.1)
    assert not np.any(s.sigma)


def test_sigma_I_constant_law():
    G0 = np.array([0.3, -0.2, 0.1])
    m = Material(theta=1.0, zeta=0.0, lam=1.0, mu=1.0,
                 viscoplastic_fn=lambda t, s, e: np.broadcast_to(G0, np.shape(s)),
                 L_G_custom=0.0)
    dt = 0.05
    s = InternalState(np.zeros((2, 3)), np.zeros((2, 3)))
    for n in range(1, 11):
        s = sigma_I_step(s, m, np.zeros((2, 3)), dt)
        np.testing.assert_allclose(s.sigma, np.tile(G0 * n * dt, (2, 1)), rtol=1e-14)


def test_sigma_I_relaxation_without_elastic_forcing():
    # the relaxation law itself (r = 1) cancels the elastic forcing, so the stress stays 0
    m = Material(theta=1.0, zeta=0.0, lam=1.0, mu=1.0, k=2.0, r=1.0)
    s = InternalState(np.zeros((1, 3)), np.ones((1, 3)))
    for _ in range(20):
        s = sigma_I_step(s, m, np.ones((1, 3)), 0.05)
    assert not np.any(s.sigma)


@pytest.mark.parametrize("implicit", [False, True])
def test_sigma_I_forced_relaxation(implicit):
    # G = -k (B e + s) with B e = E0 constant: s(t) = -E0 (1 - exp(-k t))
    k = 1.5
    m = Material(theta=1.0, zeta=0.0, lam=1.0, mu=1.0, k=k)
    eps = np.array([[0.2, -0.1, 0.05]])
    E0 = m.elasticity(eps)
    T = 1.0
    errs = []
    for N in (20, 40, 80):
        dt = T / N
        s = InternalState(np.zeros((1, 3)), eps.copy())
        worst = 0.0
        for n in range(1, N + 1):
            s = sigma_I_step(s, m, eps, dt, implicit=implicit)
            worst = max(worst, np.max(np.abs(s.sigma + E0 * (1 - np.exp(-k * n * dt)))))
        errs.append(worst)
    order = 2.0 if implicit else 1.0
    assert errs[0] / errs[1] == pytest.approx(2 ** order, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(2 ** order, rel=0.1)
    assert errs[-1] <= 3 * (T / 80) * np.max(np.abs(E0))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_sigma_I_lipschitz_in_history(seed):
    asm = small_case(steps=12)
    grid = asm.grid
    rng = np.random.default_rng(seed)
    W1, W2 = rng.standard_normal((2, len(grid), asm.dim))
    vp = asm.history_parts[1]
    s1 = vp.sigma_sequence(W1, grid)
    s2 = vp.sigma_sequence(W2, grid)
    e1 = asm.strains(asm.u0 + np.cumsum(np.r_[np.zeros((1, asm.dim)), 0.5 * grid.dt *
                                               (W1[:-1] + W1[1:])], axis=0))
    e2 = asm.strains(asm.u0 + np.cumsum(np.r_[np.zeros((1, asm.dim)), 0.5 * grid.dt *
                                               (W2[:-1] + W2[1:])], axis=0))
    c = asm.L_S["viscoplastic_c"]
    acc = 0.0
    for n in range(1, len(grid)):
        acc += grid.dt * h_norm(asm, e1[n - 1] - e2[n - 1])
        assert h_norm(asm, s1[n] - s2[n]) <= c * acc * (1 + 1e-12)


def test_displacement_reconstruction():
    grid = TimeGrid(2.0, 16)
    u0 = np.array([0.3, -1.0])
    zero = reconstruct_displacement(Trajectory(grid, np.zeros((17, 2))), u0)
    np.testing.assert_array_equal(zero.values, np.tile(u0, (17, 1)))
    c = np.array([2.0, -0.5])
    const = reconstruct_displacement(Trajectory(grid, np.tile(c, (17, 1))), u0)
    np.testing.assert_allclose(const.values, u0 + grid.nodes[:, None] * c, rtol=0,
                               atol=1e-14)
    lin = reconstruct_displacement(Trajectory(grid, np.tile(grid.nodes[:, None], (1, 2))),
                                   u0)
    np.testing.assert_allclose(lin.values, u0 + grid.nodes[:, None] ** 2 / 2, atol=1e-12)
    assert np.array_equal(lin.values[0], u0)


# --------------------------------------------------------------------------
# stress recovery and equilibrium


def test_zero_fields_zero_stress():
    asm = small_case()
    z = np.zeros(asm.dim)
    assert not np.any(recover_stress(asm, z, z, np.zeros((asm.n_elements, 3))))


def uniaxial_field(asm, a, c):
    """Free-dof coefficients of ``u = (a x, c x)``, which vanishes on the clamp."""
    x = asm.mesh.nodes[:, 0]
    full = np.column_stack([a * x, c * x]).ravel()
    return full[asm.free_dofs]


def test_uniaxial_stress_closed_form():
    lam, mu = 1.7, 0.6
    m = Material(theta=1.0, zeta=0.0, lam=lam, mu=mu)
    asm = assemble_problem(build_mesh(2.0, 1.0, 4, 2), m, ContactData(), TimeGrid(1.0, 1))
    a = 0.01
    sigma = recover_stress(asm, np.zeros(asm.dim), uniaxial_field(asm, a, 0.0),
                           np.zeros((asm.n_elements, 3)))
    expected = np.array([(lam + 2 * mu) * a, lam * a, 0.0])
    np.testing.assert_allclose(sigma, np.tile(expected, (asm.n_elements, 1)), atol=1e-14)


def test_manufactured_equilibrium():
    lam, mu, a, c = 1.7, 0.6, 0.01, 0.02
    # constant stress of u = (a x, c x); tractions on the free sides balance it
    sxx, syy, sxy = (lam + 2 * mu) * a, lam * a, mu * c
    m = Material(theta=1.0, zeta=0.0, lam=lam, mu=mu)
    data = ContactData(tractions={"right": (sxx, sxy), "top": (sxy, syy)})
    asm = assemble_problem(build_mesh(2.0, 1.0, 4, 2), m, data, TimeGrid(1.0, 1))
    sigma = recover_stress(asm, np.zeros(asm.dim), uniaxial_field(asm, a, c),
                           np.zeros((asm.n_elements, 3)))
    worst, r = divergence_residual(asm, sigma, 1)
    assert worst <= 1e-8
    # the bottom nodes carry the reaction: traction -sigma.e_y integrated over the side
    assert np.max(np.abs(r)) > 1e-3


def test_loaded_run_residual_on_contact_nodes():
    asm = small_case(steps=4)
    sol = solve_contact(asm, tol=1e-11)
    for n in range(1, 5):
        worst, r = divergence_residual(asm, sol.sigma[n], n)
        assert worst <= 1e-8
        full = asm.full_field(r)
        assert np.max(np.abs(full[asm.contact_nodes])) > 1e-6


# --------------------------------------------------------------------------
# contact law residuals


def test_default_scenario_laws():
    asm = small_case(steps=8)
    assert asm.smallness().passed
    sol = solve_contact(asm, tol=1e-11)
    summ = residual_summary(sol)
    assert summ["constraint_violation"] <= 1e-8
    assert summ["complementarity"] <= 1e-4 * summ["traction_scale"]
    assert summ["sigma_tau_max"] <= 1 + 1e-6
    assert summ["alignment"] <= 1e-4
    assert summ["sign"] <= 1e-8 * summ["traction_scale"]
    assert summ["sliding_node_steps"] > 0
    # stick nodes: only the ball bound applies
    r = contact_residuals(sol, 8)
    stick = ~r["sliding"]
    assert np.all(r["sigma_tau_norm"][stick] <= 1 + 1e-6)
    assert np.all(r["alignment"][stick] == 0.0)


def test_inactive_constraint_sign_only():
    asm = small_case(steps=4, gap=100.0)
    sol = solve_contact(asm, tol=1e-11)
    for n in range(len(sol.times)):
        r = contact_residuals(sol, n)
        assert np.all(r["w_nu"] < r["g"])
        np.testing.assert_allclose(r["complementarity"],
                                   np.abs(r["w_nu"] - r["g"]) * np.abs(r["sign"]))
        assert np.max(np.abs(r["sign"])) <= 1e-8


def test_literal_variant_has_no_normal_traction():
    mesh = build_mesh(2.0, 1.0, 4, 2)
    asm = assemble_problem(mesh, MAT, ContactData(variant="literal",
                                                  tractions={"top": (1.0, -1.0)}),
                           TimeGrid(0.25, 2))
    sol = solve_contact(asm, tol=1e-11)
    assert np.all(np.isnan(sol.sigma_nu(1)))
    assert np.all(np.isfinite(sol.sigma_tau(1)))


# --------------------------------------------------------------------------
# export


def test_vtk_and_csv_format(tmp_path):
    asm = small_case(steps=2)
    sol = solve_contact(asm, tol=1e-11)
    paths = write_snapshots(tmp_path, sol)
    assert [p.name for p in paths] == ["step_00000.vtk", "step_00001.vtk", "step_00002.vtk"]
    text = paths[-1].read_text().splitlines()
    assert text[0] == "# vtk DataFile Version 3.0"
    assert text[2:4] == ["ASCII", "DATASET UNSTRUCTURED_GRID"]
    mesh = asm.mesh
    assert f"POINTS {mesh.n_nodes} double" in text
    assert f"CELLS {mesh.n_elements} {4 * mesh.n_elements}" in text
    assert text.count("VECTORS u double") == 1 and "TENSORS sigma double" in text
    i = text.index("VECTORS u double")
    u_nodes = np.array([[float(v) for v in ln.split()[:2]] for ln in
                        text[i + 1:i + 1 + mesh.n_nodes]])
    np.testing.assert_array_equal(u_nodes, asm.full_field(sol.u.values[2]))

    path = tmp_path / "trace.csv"
    write_trace_csv(path, sol)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) == 1 + 3 * asm.n_contact
    w_nu = np.array([float(r[2]) for r in rows[1 + 2 * asm.n_contact:]])
    np.testing.assert_array_equal(w_nu, sol.normal_velocity(2))


def test_contact_data_validation():
    with pytest.raises(ConfigurationError):
        ContactData(gap=0.0)
    with pytest.raises(ConfigurationError):
        ContactData(variant="other")
    with pytest.raises(ConfigurationError):
        Material(theta=0.0, zeta=0.0, lam=1.0, mu=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ContactData(c_p=0.1, gap=math.inf)
