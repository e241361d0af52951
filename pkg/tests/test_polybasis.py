"""Dictionary construction, evaluation, products, composition and integrals."""

from math import comb

import numpy as np
import numpy.polynomial.chebyshev as C
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invmeasure.errors import DegreeOrder, DegreeOverflow, NonFiniteInput
from invmeasure.polybasis import (
    BasisSpec,
    MonomialPoly,
    PolyCoeffs,
    basis_size,
    compose_with_map,
    eval_basis,
    extraction_matrix,
    index_set,
    lebesgue_moments,
    product_linearize,
)


def cheb(n, k, box=None):
    return BasisSpec("chebyshev", n, k, box)


# -- index sets ------------------------------------------------------------


def test_index_set_small_cases():
    assert [tuple(a) for a in index_set(1, 2)] == [(0,), (1,), (2,)]
    assert [tuple(a) for a in index_set(2, 2)] == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert len(index_set(3, 14)) == 680


def test_index_set_sizes_match_binomials():
    for n in range(1, 5):
        for k in range(0, 21):
            assert basis_size(n, k) == comb(n + k, k)
    for n, k in [(1, 20), (2, 12), (3, 6), (4, 5)]:
        assert len(index_set(n, k)) == comb(n + k, k)


def test_index_set_is_graded_and_deterministic():
    a = [tuple(e) for e in index_set(3, 5)]
    assert a == [tuple(e) for e in index_set(3, 5)]
    degrees = [sum(e) for e in a]
    assert degrees == sorted(degrees)
    assert a[0] == (0, 0, 0)


# -- evaluation ------------------------------------------------------------


def test_eval_small_examples():
    np.testing.assert_allclose(eval_basis(BasisSpec("monomial", 1, 2), 2.0), [1, 2, 4])
    np.testing.assert_allclose(eval_basis(cheb(1, 3), 0.5), [1, 0.5, -0.5, -1], atol=1e-15)
    np.testing.assert_allclose(eval_basis(cheb(2, 2), [0.5, -0.5]), [1, 0.5, -0.5, -0.5, -0.25, -0.5], atol=1e-15)


def test_eval_maps_box_to_unit_square():
    spec = cheb(2, 3, ((0, 2), (-3, 1)))
    x = np.array([[1.5, -0.2]])
    s = np.array([[0.5, 0.4]])
    np.testing.assert_allclose(eval_basis(spec, x), eval_basis(cheb(2, 3), s), atol=1e-14)


def test_eval_rejects_non_finite():
    with pytest.raises(NonFiniteInput):
        eval_basis(cheb(1, 2), np.nan)


def test_eval_batch_matches_tensor_products():
    rng = np.random.default_rng(0)
    spec = cheb(3, 4)
    x = rng.uniform(-1, 1, (20, 3))
    V = eval_basis(spec, x)
    for j, alpha in enumerate(spec.indices):
        ref = np.prod([C.chebval(x[:, d], np.eye(alpha[d] + 1)[alpha[d]]) for d in range(3)], axis=0)
        np.testing.assert_allclose(V[:, j], ref, atol=1e-13)


# -- extraction ------------------------------------------------------------


def test_extraction_matrix_examples():
    np.testing.assert_array_equal(extraction_matrix(1, 2, cheb(1, 2)).toarray(), [[1, 0, 0], [0, 1, 0]])
    np.testing.assert_array_equal(extraction_matrix(3, 3, cheb(2, 3)).toarray(), np.eye(10))
    with pytest.raises(DegreeOrder):
        extraction_matrix(3, 2, cheb(1, 3))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 3), k=st.integers(0, 5), extra=st.integers(0, 4), seed=st.integers(0, 10_000),
       family=st.sampled_from(["chebyshev", "monomial"]))
def test_theta_identity_random_points(n, k, extra, seed, family):
    l = k + extra
    spec = BasisSpec(family, n, l)
    x = np.random.default_rng(seed).uniform(-1, 1, (7, n))
    lhs = (extraction_matrix(k, l, spec) @ eval_basis(spec, x).T).T
    rhs = eval_basis(spec.with_degree(k), x)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-13, atol=1e-13)


# -- products --------------------------------------------------------------


def test_product_examples():
    assert product_linearize((1, 0), (0, 2), BasisSpec("monomial", 2, 3)) == {(1, 2): 1.0}
    assert product_linearize((1,), (1,), cheb(1, 2)) == {(2,): 0.5, (0,): 0.5}


def _node_interpolate(spec, fun):
    """Independent oracle: tensor Chebyshev-node values solved against chebvander products."""
    n, K = spec.dimension, spec.degree
    nodes = np.cos(np.pi * (np.arange(K + 1) + 0.5) / (K + 1))
    grid = np.array(np.meshgrid(*([nodes] * n), indexing="ij")).reshape(n, -1).T
    V1 = [C.chebvander(grid[:, d], K) for d in range(n)]
    A = np.ones((grid.shape[0], spec.size))
    for j, alpha in enumerate(spec.indices):
        for d in range(n):
            A[:, j] *= V1[d][:, alpha[d]]
    coef, *_ = np.linalg.lstsq(A, fun(grid), rcond=None)
    return coef


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 3), data=st.data())
def test_product_matches_node_interpolation(n, data):
    alpha = tuple(data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n)))
    beta = tuple(data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n)))
    spec = cheb(n, sum(alpha) + sum(beta))
    ia, ib = spec.index_of(alpha), spec.index_of(beta)
    oracle = _node_interpolate(spec, lambda p: eval_basis(spec, p)[:, ia] * eval_basis(spec, p)[:, ib])
    mine = np.zeros(spec.size)
    for gamma, c in product_linearize(alpha, beta, spec).items():
        mine[spec.index_of(gamma)] += c
    np.testing.assert_allclose(mine, oracle, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 3), seed=st.integers(0, 10_000))
def test_product_pointwise(n, seed):
    rng = np.random.default_rng(seed)
    alpha, beta = tuple(rng.integers(0, 4, n)), tuple(rng.integers(0, 4, n))
    spec = cheb(n, sum(alpha) + sum(beta))
    x = rng.uniform(-1, 1, (100, n))
    V = eval_basis(spec, x)
    lhs = V[:, spec.index_of(alpha)] * V[:, spec.index_of(beta)]
    rhs = sum(c * V[:, spec.index_of(g)] for g, c in product_linearize(alpha, beta, spec).items())
    np.testing.assert_allclose(rhs, lhs, rtol=1e-12, atol=1e-12)


# -- composition -----------------------------------------------------------


def test_compose_examples():
    spec = cheb(1, 1)
    logistic = [MonomialPoly({(2,): 2.0, (0,): -1.0})]
    g = PolyCoeffs.from_terms(spec, {(1,): 1.0})
    np.testing.assert_allclose(compose_with_map(g, logistic, 2).coeffs, [0, 0, 1], atol=1e-14)
    g2 = PolyCoeffs.interpolate(cheb(1, 2), lambda p: p[:, 0] ** 2)
    np.testing.assert_allclose(compose_with_map(g2, logistic, 4).coeffs, [0.5, 0, 0, 0, 0.5], atol=1e-14)
    one = PolyCoeffs.from_terms(spec, {(0,): 3.0})
    np.testing.assert_allclose(compose_with_map(one, logistic, 2).coeffs, [3, 0, 0], atol=1e-14)


def test_compose_degree_overflow():
    g = PolyCoeffs.from_terms(cheb(1, 3), {(3,): 1.0})
    with pytest.raises(DegreeOverflow):
        compose_with_map(g, [MonomialPoly({(2,): 2.0, (0,): -1.0})], 5)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_compose_round_trip(seed):
    rng = np.random.default_rng(seed)
    spec = cheb(2, 3)
    g = PolyCoeffs(spec, rng.standard_normal(spec.size))
    f = [MonomialPoly({(1, 0): 0.5, (0, 2): -0.3}), MonomialPoly({(1, 1): 0.4, (0, 0): 0.1})]
    h = compose_with_map(g, f, 6)
    x = rng.uniform(-1, 1, (50, 2))
    fx = np.stack([fi(x) for fi in f], axis=1)
    np.testing.assert_allclose(h(x), g(fx), rtol=1e-11, atol=1e-11)


# -- integrals -------------------------------------------------------------


def test_lebesgue_moments_closed_forms():
    np.testing.assert_allclose(lebesgue_moments(cheb(1, 3)), [2, 0, -2 / 3, 0])
    assert lebesgue_moments(BasisSpec("monomial", 1, 2, ((0, 1),)))[2] == pytest.approx(1 / 3)
    spec = cheb(2, 4)
    assert lebesgue_moments(spec)[spec.index_of((2, 2))] == pytest.approx(4 / 9)


def test_lebesgue_moments_against_quadrature():
    spec = cheb(2, 6, ((0, 2), (-1, 3)))
    t, w = np.polynomial.legendre.leggauss(10)
    x1, x2 = 1 + t, 1 + 2 * t
    X = np.stack(np.meshgrid(x1, x2, indexing="ij"), -1).reshape(-1, 2)
    W = np.outer(w, 2 * w).ravel()
    np.testing.assert_allclose(lebesgue_moments(spec), W @ eval_basis(spec, X), atol=1e-12)
