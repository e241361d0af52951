"""Densities, CDFs, atom extraction, expectations and the histogram baseline."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import dblquad, quad

from invmeasure import dynamics as dyn
from invmeasure.errors import DegreeOverflow, DimensionNotOne, ExtractionFailed
from invmeasure.polybasis import BasisSpec, MonomialPoly, PolyCoeffs, eval_basis, lebesgue_moments
from invmeasure.recovery import (
    AtomicMeasure,
    SignedDensity,
    cdf,
    cdf_and_l1,
    density_from_moments,
    dirac_moments,
    double_well_density,
    double_well_expectations,
    expectation,
    extract_atoms,
    histogram_density,
    logistic_cdf,
)


# -- densities -------------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 3), r=st.integers(0, 6), seed=st.integers(0, 10_000),
       family=st.sampled_from(["chebyshev", "monomial"]))
def test_density_reproduces_its_moments(n, r, seed, family):
    rng = np.random.default_rng(seed)
    box = tuple((a, a + rng.uniform(0.5, 3)) for a in rng.uniform(-2, 1, n))
    spec = BasisSpec(family, n, r + 2, box)
    pts = rng.uniform([a for a, _ in box], [b for _, b in box], (30, n))
    y = eval_basis(spec, pts).mean(axis=0)
    rho = density_from_moments(y, r, spec)
    mu = lebesgue_moments(spec.with_degree(r))
    assert rho.mass() == pytest.approx(1.0, abs=1e-8)
    # int b_gamma rho = y_gamma for |gamma| <= r
    for j in range(mu.size):
        g = PolyCoeffs(spec.with_degree(r), np.eye(mu.size)[j])
        assert expectation(rho, g) == pytest.approx(y[j], abs=1e-8 * max(1, abs(y[j])))


def test_density_of_uniform_moments_is_constant():
    spec = BasisSpec("chebyshev", 1, 6, ((0.0, 2.0),))
    mu = lebesgue_moments(spec)
    rho = density_from_moments(mu / mu[0], 4, spec)
    np.testing.assert_allclose(rho.poly(np.linspace(0, 2, 11)), 0.5, atol=1e-12)
    with pytest.raises(DegreeOverflow):
        density_from_moments(mu[:3], 4, spec)


def test_cdf_derivative_is_the_density():
    spec = BasisSpec("chebyshev", 1, 8, ((-2.0, 1.0),))
    rho = SignedDensity(PolyCoeffs(spec, np.random.default_rng(0).standard_normal(spec.size)))
    R = cdf(rho)
    x = np.linspace(-1.9, 0.9, 15)
    h = 1e-6
    np.testing.assert_allclose((R(x + h) - R(x - h)) / (2 * h), rho.poly(x), atol=1e-4)
    assert R(np.array([-2.0]))[0] == pytest.approx(0.0, abs=1e-14)
    mono = SignedDensity(PolyCoeffs(BasisSpec("monomial", 1, 2, ((0.0, 1.0),)), [0.0, 0.0, 3.0]))
    np.testing.assert_allclose(cdf(mono)(np.array([0.5, 1.0])), [0.125, 1.0])
    with pytest.raises(DimensionNotOne):
        cdf(SignedDensity(PolyCoeffs(BasisSpec("chebyshev", 2, 1), [0.25, 0, 0])))


def test_logistic_cdf_and_l1():
    assert logistic_cdf(np.array([-1.0, 0.0, 1.0])) == pytest.approx([0.0, 0.5, 1.0])
    x = np.array([0.3])
    ref = quad(lambda s: 1 / (np.pi * np.sqrt(1 - s * s)), -1, 0.3)[0]
    assert logistic_cdf(x)[0] == pytest.approx(ref, abs=1e-10)
    spec = BasisSpec("chebyshev", 1, 2)
    uniform = density_from_moments([1.0, 0.0, -1.0 / 3.0], 2, spec)
    # uniform CDF against the arcsine law
    ref = quad(lambda s: abs((s + 1) / 2 - logistic_cdf(np.array([s]))[0]), -1, 1, limit=200)[0]
    assert cdf_and_l1(uniform, logistic_cdf) == pytest.approx(ref, rel=1e-6)


# -- atoms -----------------------------------------------------------------------


def _separated_points(rng, n, count, gap=0.2):
    pts = []
    while len(pts) < count:
        p = rng.uniform(-0.95, 0.95, n)
        if all(np.linalg.norm(p - q) > gap for q in pts):
            pts.append(p)
    return np.array(pts)


def _match(found, true, tol):
    used = set()
    for p in true:
        d = np.linalg.norm(found - p, axis=1)
        j = int(np.argmin(d))
        assert d[j] < tol and j not in used
        used.add(j)


@pytest.mark.parametrize("n, degree", [(1, 10), (2, 8), (3, 8)])
@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), count=st.integers(1, 5))
def test_extraction_round_trip(n, degree, seed, count):
    rng = np.random.default_rng(seed)
    pts = _separated_points(rng, n, count)
    w = rng.dirichlet(np.ones(count)) * 0.9 + 0.1 / count
    spec = BasisSpec("chebyshev", n, degree)
    mu = extract_atoms(dirac_moments(pts, w, spec), spec)
    assert mu.size == count
    _match(mu.points, pts, 1e-6)
    for p, wt in zip(pts, w):
        j = int(np.argmin(np.linalg.norm(mu.points - p, axis=1)))
        assert mu.weights[j] == pytest.approx(wt, abs=1e-6)
    assert abs(mu.weights.sum() - 1) <= 1e-6 and mu.weights.min() >= -1e-6
    assert mu.diagnostics["residual"] <= 1e-4


def test_extraction_in_scaled_box_and_monomials():
    spec = BasisSpec("chebyshev", 2, 6, ((0.0, 10.0), (-5.0, 5.0)))
    pts = np.array([[2.0, 1.0], [7.5, -3.0]])
    mu = extract_atoms(dirac_moments(pts, [0.3, 0.7], spec), spec)
    np.testing.assert_allclose(mu.points, pts, atol=1e-6)
    mono = BasisSpec("monomial", 1, 6)
    mu = extract_atoms(dirac_moments([[-0.5], [0.25]], [0.5, 0.5], mono), mono)
    np.testing.assert_allclose(mu.points[:, 0], [-0.5, 0.25], atol=1e-8)


def test_extraction_refuses_a_diffuse_measure():
    spec = BasisSpec("chebyshev", 1, 8)
    mu = lebesgue_moments(spec)
    with pytest.raises(ExtractionFailed):
        extract_atoms(mu / mu[0], spec)


def test_atomic_measure_round_trip():
    mu = AtomicMeasure([[0.1], [0.2]], [0.4, 0.6], {"rank": 2})
    back = AtomicMeasure.from_dict(mu.to_dict())
    np.testing.assert_array_equal(back.points, mu.points)
    assert back.diagnostics == {"rank": 2}


# -- expectations and histograms ---------------------------------------------------


def test_expectation_of_atoms_and_densities():
    spec = BasisSpec("chebyshev", 1, 4)
    g = PolyCoeffs.interpolate(spec, lambda p: p[:, 0] ** 4)
    mu = AtomicMeasure([[0.5], [-1.0]], [0.5, 0.5])
    assert expectation(mu, g) == pytest.approx(0.5 * 0.0625 + 0.5)
    rho = density_from_moments(lebesgue_moments(spec) / 2, 4, spec)
    assert expectation(rho, g) == pytest.approx(0.2)
    with pytest.raises(TypeError):
        expectation("nope", g)


def test_histogram_single_point_and_mass():
    h = histogram_density(np.array([[0.33]]), 10, ((0.0, 1.0),))
    assert h.density.sum() * 0.1 == pytest.approx(1.0)
    assert h(np.array([[0.35]]))[0] == pytest.approx(10.0)
    s = dyn.simulate_sde(dyn.double_well(), 0.75, 1e-4, 5000, [0.1, 0.1], 1)
    h2 = histogram_density(s, (7, 9))
    assert h2.expectation(lambda p: np.ones(len(p)), 0) == pytest.approx(1.0)


def test_histogram_expectation_is_exact_per_cell():
    h = histogram_density(np.array([[0.05], [0.55]]), 2, ((0.0, 1.0),))
    # density 1 on each half: E[x^3] = int_0^1 x^3 dx
    g = MonomialPoly({(3,): 1.0}, 1)
    assert h.expectation(g, 3) == pytest.approx(0.25, abs=1e-14)


def test_double_well_oracle_against_adaptive_quadrature():
    z = dblquad(lambda b, a: double_well_density(a, b), -1, 1, -1, 1, epsabs=1e-12)[0]
    num = dblquad(lambda b, a: (2 * a * a - 1) * double_well_density(a, b), -1, 1, -1, 1, epsabs=1e-12)[0]
    got = double_well_expectations([lambda p: 2 * p[:, 0] ** 2 - 1])[0]
    assert got == pytest.approx(num / z, abs=1e-9)
    assert got == pytest.approx(-0.825, abs=5e-4)
