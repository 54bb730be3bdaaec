from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vhisolve.core import (Box, InnerProductSpace, LinearCoupling, MonotoneOperator,
                           VHIProblem, VolterraKernel, ZeroFunctional, ZeroHistory,
                           CompactMap, TimeGrid, WholeSpace)
from vhisolve.exceptions import NonConvergenceError, WellPosednessError
from vhisolve.static import solve_static
from vhisolve.stepper import (contraction_diagnostics, fit_rate,
                              gronwall_uniqueness_check, solve_trajectory)

from instances import ode_problem, random_problem


def exact(t):
    return 1.0 - np.exp(-t)


def test_zero_history_is_per_step_static():
    rng = np.random.default_rng(3)
    prob = random_problem(rng, 2, 10, history=False)
    traj, rep = solve_trajectory(prob, tol=1e-10)
    for n in range(len(prob.grid)):
        inst = prob.static_instance(n, np.zeros(2))
        ref = solve_static(inst, guess=prob.K.feasible_point if n == 0 else traj.values[n - 1],
                           tol=1e-11, check=False).u
        np.testing.assert_array_equal(traj.values[n], ref)
    traj2, rep2 = solve_trajectory(prob, mode="fixed-point", tol=1e-10)
    assert rep2.sweeps == 1 and rep2.distances[-1] == 0.0
    assert contraction_diagnostics(rep2)["rate"] == 0.0
    np.testing.assert_allclose(traj2.values, traj.values, atol=1e-9)


@pytest.mark.parametrize("mode", ["marching", "fixed-point"])
def test_ode_within_two_dt(mode):
    prob = ode_problem(100)
    traj, _ = solve_trajectory(prob, mode=mode, tol=1e-10)
    err = np.max(np.abs(traj.values[:, 0] - exact(prob.grid.nodes)))
    assert err <= 2 * prob.grid.dt


def test_ode_first_order_refinement():
    errs = []
    for N in (50, 100, 200):
        prob = ode_problem(N)
        traj, _ = solve_trajectory(prob, tol=1e-12)
        errs.append(np.max(np.abs(traj.values[:, 0] - exact(prob.grid.nodes))))
    assert errs[0] / errs[1] >= 1.7 and errs[1] / errs[2] >= 1.7


@pytest.mark.parametrize("seed", range(3))
def test_fixed_point_matches_marching_random(seed):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, 3, 20)
    tol = 1e-8
    a, _ = solve_trajectory(prob, mode="marching", tol=tol)
    b, rep = solve_trajectory(prob, mode="fixed-point", tol=tol)
    assert a.sup_distance(b, prob.space.norm) <= 5 * (prob.grid.dt + tol)
    diag = contraction_diagnostics(rep)
    assert diag["rate"] < 1 and diag["geometric"]
    d = rep.distances
    assert all(d[k + 1] <= 1.05 * d[k] for k in range(1, len(d) - 1))


def test_contraction_diagnostics_examples():
    diag = contraction_diagnostics([1.0, 0.5, 0.25, 0.125])
    assert diag["rate"] == pytest.approx(0.5, rel=1e-12)
    assert diag["geometric"]
    assert diag["table"][1]["ratio"] == 0.5
    with pytest.raises(ValueError):
        contraction_diagnostics([1.0, 0.5])
    assert not contraction_diagnostics([1.0, 0.5, 0.9, 0.95])["geometric"]


def test_fit_rate_edge_cases():
    assert fit_rate([]) == 0.0
    assert fit_rate([1.0, 0.0]) == 0.0
    assert fit_rate([2.0, 0.2, 0.02]) == pytest.approx(0.1)


def test_gronwall_zero_history_identical():
    rng = np.random.default_rng(5)
    prob = random_problem(rng, 2, 8, history=False, nonsmooth=False)
    out = gronwall_uniqueness_check(prob, tol=1e-12)
    assert out["passed"] and out["max_pairwise"] <= 1e-12


def test_gronwall_ode():
    out = gronwall_uniqueness_check(ode_problem(40), tol=1e-9)
    assert out["passed"]
    assert out["max_pairwise"] <= 10 * 1e-9


def test_gronwall_refuses_ill_posed():
    space = InnerProductSpace.euclidean(1)
    prob = VHIProblem(space=space, grid=TimeGrid(1.0, 4), K=WholeSpace(1),
                      A=MonotoneOperator.linear(np.eye(1), space),
                      phi=LinearCoupling(1, np.eye(1) * 2, 2.0), J=ZeroFunctional(1),
                      M=CompactMap.identity(space), S=ZeroHistory(1), f=np.zeros((5, 1)))
    with pytest.raises(WellPosednessError):
        gronwall_uniqueness_check(prob)
    with pytest.raises(WellPosednessError):
        solve_trajectory(prob)


def test_marching_is_causal():
    rng = np.random.default_rng(8)
    prob = random_problem(rng, 2, 20)
    full, _ = solve_trajectory(prob, tol=1e-10)
    m = 9
    f = prob.f.copy()
    f[m + 1:] = 123.0
    kern = prob.S

    def cut(t, s):
        return np.where(np.asarray(s) <= prob.grid.nodes[m] + 1e-14, kern.kernel(t, s), 7.0)

    S2 = VolterraKernel(2, cut, kern.lipschitz * 10, pointwise=kern.pointwise)
    prob2 = replace(prob, f=f, S=S2)
    part, _ = solve_trajectory(prob2, tol=1e-10, check=False)
    np.testing.assert_array_equal(full.values[:m + 1], part.values[:m + 1])


def test_threads_deterministic(monkeypatch):
    rng = np.random.default_rng(1)
    prob = random_problem(rng, 2, 12)
    a, ra = solve_trajectory(prob, mode="fixed-point", tol=1e-9, workers=1)
    monkeypatch.setenv("VHISOLVE_THREADS", "4")
    b, rb = solve_trajectory(prob, mode="fixed-point", tol=1e-9)
    np.testing.assert_array_equal(a.values, b.values)
    assert ra.distances == rb.distances


def test_sweep_cap_raises_with_partial():
    prob = ode_problem(20)
    with pytest.raises(NonConvergenceError) as exc:
        solve_trajectory(prob, mode="fixed-point", tol=1e-14, max_sweeps=2)
    assert exc.value.partial.shape == (21, 1)
    assert len(exc.value.iterates) == 2


def test_static_failure_reports_step():
    space = InnerProductSpace.euclidean(1)
    grid = TimeGrid(1.0, 5)
    f = np.zeros((6, 1))
    f[3] = np.nan
    prob = VHIProblem(space=space, grid=grid, K=Box([-1.0], [1.0]),
                      A=MonotoneOperator.linear(2 * np.eye(1), space),
                      phi=LinearCoupling(1), J=ZeroFunctional(1),
                      M=CompactMap.identity(space), S=ZeroHistory(1), f=f)
    with pytest.raises(NonConvergenceError) as exc:
        solve_trajectory(prob)
    assert exc.value.step == 3
    assert exc.value.partial.shape == (3, 1)


def test_unknown_mode():
    with pytest.raises(ValueError):
        solve_trajectory(ode_problem(4), mode="implicit")


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10_000))
def test_discrete_continuous_dependence(seed):
    # the dependence constant does not grow with the grid
    delta = 0.3 * np.random.default_rng(seed + 1).standard_normal(2)
    ratios = []
    for N in (10, 40):
        prob = random_problem(np.random.default_rng(seed), 2, N)
        a, _ = solve_trajectory(prob, tol=1e-11)
        b, _ = solve_trajectory(replace(prob, f=prob.f + delta), tol=1e-11)
        d = prob.space.dual_norm(delta)
        ratios.append(a.sup_distance(b, prob.space.norm) / d)
    assert ratios[1] <= 1.5 * ratios[0] + 1e-6
