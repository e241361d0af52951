"""Moment and localizing matrices, objectives and problem assembly."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invmeasure import dynamics as dyn
from invmeasure.edmd import exact_lie_matrix
from invmeasure.errors import DimensionMismatch
from invmeasure.momentsdp import (
    Linear,
    MomentFit,
    MomentProblem,
    SemialgebraicSet,
    assemble_problem,
    lift_momentfit,
    moment_matrix_map,
    randomized_objectives,
)
from invmeasure.polybasis import BasisSpec, MonomialPoly, eval_basis

UNIT01 = ((0.0, 1.0),)


def quadratic_example():
    spec = BasisSpec("monomial", 1, 2, UNIT01)
    f = dyn.PolynomialSystem("q", "map", (MonomialPoly({(1,): 2.0, (2,): -1.0}),), UNIT01)
    L = exact_lie_matrix(f, 1, 2, spec)
    return assemble_problem(L, SemialgebraicSet.box(spec), Linear([0.0, -1.0]))


def test_quadratic_example_structure():
    P = quadratic_example()
    np.testing.assert_allclose(P.A_eq.toarray(), [[0, 1, -1], [1, 0, 0]])
    np.testing.assert_allclose(P.b_eq, [0, 1])
    y = np.array([1.0, 0.3, 0.2])
    moment, loc = P.blocks
    np.testing.assert_allclose(moment(y), [[1, 0.3], [0.3, 0.2]])
    np.testing.assert_allclose(loc(y), [[0.1]])


def test_box_polynomials():
    cheb = SemialgebraicSet.box(BasisSpec("chebyshev", 2, 4))
    x = np.array([[0.3, -0.8]])
    np.testing.assert_allclose([p(x)[0] for p in cheb.polys], [1 - 0.09, 1 - 0.64])
    mono = SemialgebraicSet.box(BasisSpec("monomial", 1, 2, ((2.0, 5.0),)))
    assert mono.polys[0](np.array([3.0]))[0] == pytest.approx(2.0)


def _measure_moments(spec, points, weights):
    return weights @ eval_basis(spec, points).reshape(len(points), -1)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 3), l=st.integers(2, 6), seed=st.integers(0, 10_000),
       family=st.sampled_from(["chebyshev", "monomial"]))
def test_localizing_matrices_of_measures_are_psd(n, l, seed, family):
    rng = np.random.default_rng(seed)
    spec = BasisSpec(family, n, l)
    pts = rng.uniform(-1, 1, (rng.integers(1, 40), n))
    w = rng.dirichlet(np.ones(len(pts)))
    y = _measure_moments(spec, pts, w)
    X = SemialgebraicSet.box(spec)
    maps = [moment_matrix_map(None, l, spec)] + [moment_matrix_map(p, l, spec) for p in X.polys]
    for M in maps:
        if M.size:
            assert np.linalg.eigvalsh(M(y)).min() >= -1e-10


def test_localizing_matrix_entries_are_integrals():
    rng = np.random.default_rng(2)
    spec = BasisSpec("chebyshev", 2, 6)
    pts = rng.uniform(-1, 1, (25, 2))
    y = _measure_moments(spec, pts, np.full(25, 1 / 25))
    sigma = SemialgebraicSet.box(spec).polys[1]
    M = moment_matrix_map(sigma, 6, spec)
    V = eval_basis(spec.with_degree(2), pts)
    ref = (V * sigma(pts)[:, None]).T @ V / 25
    np.testing.assert_allclose(M(y), ref, atol=1e-13)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 1000))
def test_moment_matrix_map_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    spec = BasisSpec("chebyshev", 2, 4)
    M = moment_matrix_map(SemialgebraicSet.box(spec).polys[0], 4, spec)
    y1, y2 = rng.standard_normal((2, spec.size))
    np.testing.assert_allclose(M(a * y1 + b * y2), a * M(y1) + b * M(y2), atol=1e-12)


def _arcsine_chebyshev_moments(l):
    y = np.zeros(l + 1)
    y[0] = 1.0
    return y


@pytest.mark.parametrize("k", [1, 5, 10, 20])
def test_logistic_physical_measure_is_annihilated(k):
    spec = BasisSpec("chebyshev", 1, 2 * k)
    A = exact_lie_matrix(dyn.logistic_map(), k, 2 * k, spec)
    assert np.max(np.abs(A.entries @ _arcsine_chebyshev_moments(2 * k))) <= 1e-10


def test_arcsine_moments_are_chebyshev_integrals():
    # the arcsine law gives E[T_j] = 0 for j >= 1: check by Gauss-Chebyshev quadrature
    nodes = np.cos(np.pi * (np.arange(200) + 0.5) / 200)
    V = eval_basis(BasisSpec("chebyshev", 1, 30), nodes)
    np.testing.assert_allclose(V.mean(axis=0), _arcsine_chebyshev_moments(30), atol=1e-13)


# -- objectives --------------------------------------------------------------


def test_randomized_objectives():
    a = randomized_objectives(5, 1, seed=3)
    b = randomized_objectives(5, 1, seed=3)
    np.testing.assert_array_equal(a[0].c, b[0].c)
    many = randomized_objectives(5, 1000, seed=0)
    C = np.array([o.c for o in many])
    assert np.all(C[:, 0] == 0)
    np.testing.assert_allclose(np.linalg.norm(C, axis=1), 1.0, atol=1e-12)
    assert np.all(np.abs(C[:, 1:].mean(axis=0)) < 0.1)
    with pytest.raises(ValueError):
        randomized_objectives(5, 0, seed=0)


def test_momentfit_validation_and_lift():
    with pytest.raises(ValueError):
        MomentFit([1], [0.5], [0.0])
    with pytest.raises(DimensionMismatch):
        MomentFit([1, 2], [0.5], [1.0])
    fit = MomentFit.relative([1, 2], [0.5, -0.25])
    np.testing.assert_allclose(fit.weights, [4.0, 16.0])
    spec = BasisSpec("chebyshev", 1, 4)
    L = exact_lie_matrix(dyn.logistic_map(), 2, 4, spec)
    P = assemble_problem(L, SemialgebraicSet.box(spec), fit)
    lifted = lift_momentfit(P)
    assert lifted.n_var == P.n_var + 1
    u = np.concatenate([np.array([1, 0.4, 0.1, 0, 0]), [0.0]])
    s = lifted.soc[0]
    assert np.linalg.norm(s.rows @ u - s.offset) ** 2 == pytest.approx(fit.value(u[:5]))


def test_objective_degree_checks():
    spec = BasisSpec("chebyshev", 1, 4)
    L = exact_lie_matrix(dyn.logistic_map(), 2, 4, spec)
    X = SemialgebraicSet.box(spec)
    with pytest.raises(DimensionMismatch):
        assemble_problem(L, X, Linear([0, 0, 0, 1.0]))
    with pytest.raises(DimensionMismatch):
        assemble_problem(L, X, MomentFit([3], [0.1], [1.0]))
    with pytest.raises(DimensionMismatch):
        assemble_problem(L, SemialgebraicSet.box(BasisSpec("chebyshev", 2, 4)), Linear([0, 1.0]))


# -- serialization -------------------------------------------------------------


def test_problem_round_trip_is_exact(tmp_path):
    spec = BasisSpec("chebyshev", 2, 4)
    L = exact_lie_matrix(dyn.double_well(), 2, 4, spec)
    P = assemble_problem(L, SemialgebraicSet.box(spec), MomentFit.relative([1, 2], [0.1, -0.2]))
    for prob in (P, lift_momentfit(P)):
        R = MomentProblem.load(prob.save(tmp_path / "p.json"))
        assert (R.A_eq != prob.A_eq).nnz == 0
        np.testing.assert_array_equal(R.b_eq, prob.b_eq)
        for a, b in zip(R.blocks, prob.blocks):
            assert (a.rows != b.rows).nnz == 0 and a.name == b.name
        assert R.to_dict() == prob.to_dict()
    again = assemble_problem(L, SemialgebraicSet.box(spec), MomentFit.relative([1, 2], [0.1, -0.2]))
    assert again.to_dict() == P.to_dict()


def test_with_objective():
    P = quadratic_example()
    Q = P.with_objective(Linear([0.0, 1.0, 0.0]))
    assert Q.objective.c[1] == 1.0 and P.objective.c[1] == -1.0
    with pytest.raises(ValueError):
        lift_momentfit(P.with_objective(MomentFit([1], [0.5], [1.0]))).with_objective(Linear([0, 1.0, 0]))


def test_diagnostics_report_feasibility():
    P = quadratic_example()
    d = P.diagnostics([1.0, 1.0, 1.0])
    assert d["eq_residual"] < 1e-15
    assert d["min_eig"]["moment"] == pytest.approx(0.0, abs=1e-14)
