"""Conic standard form, projections and the ADMM solver."""

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from invmeasure import dynamics as dyn
from invmeasure.edmd import exact_lie_matrix
from invmeasure.errors import DimensionMismatch, MaxIterExceeded
from invmeasure.momentsdp import Linear, MomentFit, SemialgebraicSet, assemble_problem, randomized_objectives
from invmeasure.polybasis import BasisSpec, MonomialPoly, eval_basis
from invmeasure.sdpsolver import (
    Cones,
    ConicStandardForm,
    SolverSettings,
    psd_project,
    smat,
    soc_project,
    solve,
    solve_problem,
    svec,
    to_standard_form,
)

UNIT01 = ((0.0, 1.0),)


def quadratic_example():
    spec = BasisSpec("monomial", 1, 2, UNIT01)
    f = dyn.PolynomialSystem("q", "map", (MonomialPoly({(1,): 2.0, (2,): -1.0}),), UNIT01)
    return assemble_problem(exact_lie_matrix(f, 1, 2, spec), SemialgebraicSet.box(spec), Linear([0.0, -1.0]))


def logistic_problem(k=5, objective=None):
    spec = BasisSpec("chebyshev", 1, 2 * k)
    L = exact_lie_matrix(dyn.logistic_map(), k, 2 * k, spec)
    return assemble_problem(L, SemialgebraicSet.box(spec), objective or Linear(np.eye(k + 1)[1]))


# -- vectorization and projections -------------------------------------------


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 8))
def test_svec_round_trip_and_inner_product(seed, n):
    rng = np.random.default_rng(seed)
    A, B = rng.standard_normal((2, n, n))
    A, B = A + A.T, B + B.T
    np.testing.assert_allclose(smat(svec(A)), A, atol=1e-15)
    assert svec(A) @ svec(B) == pytest.approx(np.sum(A * B))


def test_psd_project_examples():
    np.testing.assert_allclose(psd_project(np.diag([2.0, -1.0])), np.diag([2.0, 0.0]))
    rng = np.random.default_rng(0)
    G = rng.standard_normal((5, 5))
    M = G @ G.T
    np.testing.assert_allclose(psd_project(M), M, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_psd_project_is_the_nearest_psd_matrix(seed):
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((10, 10))
    S = S + S.T
    P = psd_project(S)
    assert np.linalg.eigvalsh(P).min() >= -1e-12
    d = np.linalg.norm(P - S)
    for _ in range(100):
        G = rng.standard_normal((10, rng.integers(1, 11)))
        M = G @ G.T * rng.uniform(0.01, 2)
        assert d <= np.linalg.norm(M - S) + 1e-12


def test_soc_project():
    np.testing.assert_allclose(soc_project(np.array([2.0, 1.0, 0.0])), [2, 1, 0])
    np.testing.assert_allclose(soc_project(np.array([-3.0, 1.0, 0.0])), [0, 0, 0])
    p = soc_project(np.array([0.0, 3.0, 4.0]))
    assert p[0] == pytest.approx(np.linalg.norm(p[1:]))


# -- standard form -------------------------------------------------------------


def test_standard_form_of_quadratic_example():
    form = to_standard_form(quadratic_example())
    assert form.cones.zero == 2
    assert form.cones.nonneg == 1
    assert form.cones.psd == [2]
    assert form.cones.rows == form.A.shape[0] == 6


def test_standard_form_without_psd_blocks_is_an_lp():
    P = quadratic_example()
    P.blocks = [b for b in P.blocks if b.size == 1]
    form = to_standard_form(P)
    assert form.cones.psd == [] and form.cones.soc == []


def test_standard_form_validation(tmp_path):
    with pytest.raises(DimensionMismatch):
        ConicStandardForm(sp.eye(3), np.zeros(3), np.zeros(3), Cones(zero=2))
    form = to_standard_form(logistic_problem())
    back = ConicStandardForm.load(form.save(tmp_path / "f.json"))
    assert (back.A != form.A).nnz == 0 and back.cones == form.cones


# -- solves --------------------------------------------------------------------


def test_quadratic_example_solution():
    y, rep = solve_problem(quadratic_example())
    assert rep.status == "optimal"
    np.testing.assert_allclose(y, [1, 1, 1], atol=1e-6)
    assert rep.objective == pytest.approx(-1.0, abs=1e-6)


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_lp_with_known_optimum(seed):
    # build min c.u s.t. A u <= b from a strictly complementary KKT point
    rng = np.random.default_rng(seed)
    m, n = 12, 5
    A = rng.standard_normal((m, n))
    u = rng.standard_normal(n)
    active = rng.permutation(m)[:6]
    s = rng.uniform(0.5, 2.0, m)
    s[active] = 0.0
    lam = np.zeros(m)
    lam[active] = rng.uniform(0.5, 2.0, 6)
    form = ConicStandardForm(A, A @ u + s, -A.T @ lam, Cones(nonneg=m))
    x, rep = solve(form, SolverSettings(eps_abs=1e-10, eps_rel=1e-10))
    assert rep.status == "optimal"
    np.testing.assert_allclose(x, u, atol=1e-7)
    assert rep.objective == pytest.approx(-(A.T @ lam) @ u, abs=1e-7)


def test_optimal_reports_meet_tolerances():
    for obj in randomized_objectives(5, 5, seed=1):
        P = logistic_problem(objective=obj)
        u, rep = solve(to_standard_form(P), SolverSettings(), 1)
        assert rep.status == "optimal"
        assert rep.relative_primal < 1e-7
        assert rep.min_slack_eig >= -1e-7
        d = P.diagnostics(u)
        assert d["eq_residual"] < 1e-6
        assert min(d["min_eig"].values()) >= -1e-6


def test_not_worse_than_known_invariant_measures():
    k = 5
    spec = BasisSpec("chebyshev", 1, 2 * k)
    cycle = np.cos(2 * np.pi * np.array([1, 2, 4]) / 9)
    feasible = [eval_basis(spec, cycle).mean(axis=0), np.eye(2 * k + 1)[0], eval_basis(spec, -0.5)]
    for obj in randomized_objectives(k, 4, seed=7):
        P = logistic_problem(k, obj)
        for yf in feasible:
            assert np.max(np.abs(P.A_eq @ yf - P.b_eq)) < 1e-12
        y, rep = solve_problem(P)
        assert rep.objective <= min(obj.value(yf) for yf in feasible) + 1e-6


def test_determinism():
    P = logistic_problem(objective=MomentFit([1, 2], [0.01, -0.4], [1.0, 1.0]))
    y1, r1 = solve_problem(P)
    y2, r2 = solve_problem(P)
    np.testing.assert_array_equal(y1, y2)
    d1, d2 = r1.to_dict(), r2.to_dict()
    d1.pop("wall_time"), d2.pop("wall_time")
    assert d1 == d2


def test_max_iter_behaviour():
    P = logistic_problem(10)
    y, rep = solve_problem(P, SolverSettings(max_iter=20))
    assert rep.status in ("max_iter", "infeasible_like") and rep.iterations == 20
    with pytest.raises(MaxIterExceeded):
        solve_problem(P, SolverSettings(max_iter=20, strict=True))


def test_zero_fit_is_centered():
    P = logistic_problem(5, MomentFit([1], [0.0], [1.0]))
    y, rep = solve_problem(P)
    assert rep.centered
    np.testing.assert_allclose(y[1], 0.0, atol=1e-9)
    assert min(np.linalg.eigvalsh(b(y)).min() for b in P.blocks) > 0


# -- independent conic solver ----------------------------------------------------


def _cvxpy_solve(P):
    cp = pytest.importorskip("cvxpy")
    y = cp.Variable(P.y_size)
    cons = [P.A_eq[:, : P.y_size] @ y == P.b_eq]
    for blk in P.blocks:
        basis = [blk(e) for e in np.eye(P.y_size)]
        M = sum(y[j] * basis[j] for j in range(P.y_size) if np.any(basis[j]))
        cons.append(M >> 0 if blk.size > 1 else M >= 0)
    obj = P.objective
    if isinstance(obj, Linear):
        expr = obj.c @ y
    else:
        expr = cp.sum(cp.multiply(obj.weights, cp.square(y[obj.indices] - obj.targets)))
    prob = cp.Problem(cp.Minimize(expr), cons)
    prob.solve(solver=cp.CLARABEL)
    return y.value, prob.value


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_matches_an_interior_point_solver(seed):
    obj = randomized_objectives(6, 1, seed=seed)[0]
    P = logistic_problem(6, obj)
    y, rep = solve_problem(P)
    _, ref = _cvxpy_solve(P)
    assert rep.objective == pytest.approx(ref, abs=1e-6)


def test_fit_matches_an_interior_point_solver():
    s = dyn.simulate_map(dyn.logistic_map(), 0.25, 1000)
    from invmeasure.edmd import edmd_lie_matrix

    spec = BasisSpec("chebyshev", 1, 10)
    L = edmd_lie_matrix(s, 5, 10, spec)
    P = assemble_problem(L, SemialgebraicSet.box(spec), MomentFit([1, 2], [0.2, 0.3], [1.0, 1.0]))
    y, rep = solve_problem(P)
    yr, ref = _cvxpy_solve(P)
    assert rep.objective == pytest.approx(ref, abs=1e-6)
    np.testing.assert_allclose(y[1:3], yr[1:3], atol=1e-4)
