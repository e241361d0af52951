"""Turning moment vectors back into measures.

Two representations are produced: signed polynomial densities with respect
to Lebesgue measure on the box, and finite atomic measures read off a
rank-deficient moment matrix. A histogram estimator is included as a
baseline for comparing predicted expectations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.integrate as si
import scipy.linalg as sla
import scipy.optimize as so
from numpy.polynomial import chebyshev as npcheb
from numpy.polynomial import polynomial as nppoly

from .errors import DegreeOverflow, DimensionNotOne, ExtractionFailed, SingularReference
from .momentsdp import moment_matrix_map
from .polybasis import (
    CHEBYSHEV,
    BasisSpec,
    PolyCoeffs,
    basis_size,
    eval_basis,
    flat_index,
    gram_matrix,
    lebesgue_moments,
)


# ---------------------------------------------------------------------------
# signed densities


def reference_moment_matrix(spec: BasisSpec, r: int) -> np.ndarray:
    """``M_pi = int p_r p_r^T dx`` over the box of ``spec``."""
    sub = spec.with_degree(r)
    return gram_matrix(sub, sub, lebesgue_moments)


@dataclass
class SignedDensity:
    """Polynomial density ``rho = c . p_r`` with respect to Lebesgue measure on the box."""

    poly: PolyCoeffs

    @property
    def spec(self) -> BasisSpec:
        return self.poly.spec

    @property
    def degree(self) -> int:
        return self.spec.degree

    def __call__(self, x) -> np.ndarray:
        return self.poly(x)

    def mass(self) -> float:
        return float(lebesgue_moments(self.spec) @ self.poly.coeffs)

    def moments(self, degree: int) -> np.ndarray:
        """``int b_g rho dx`` for every dictionary element up to ``degree``."""
        return gram_matrix(self.spec.with_degree(degree), self.spec, lebesgue_moments) @ self.poly.coeffs

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "coeffs": self.poly.coeffs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SignedDensity":
        return cls(PolyCoeffs(BasisSpec.from_dict(d["spec"]), np.asarray(d["coeffs"])))


def density_from_moments(y, r: int, spec: BasisSpec) -> SignedDensity:
    """Degree-``r`` polynomial whose Lebesgue moments up to degree ``r`` equal ``y``.

    Parameters
    ----------
    y : array_like
        Moment vector in the dictionary ``spec`` (any degree ``>= r``).
    r : int
        Degree of the recovered density.
    spec : BasisSpec

    Raises
    ------
    DegreeOverflow
        If ``y`` holds fewer than ``binom(n + r, r)`` entries.
    SingularReference
        If the reference moment matrix is not numerically positive definite.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    size = basis_size(spec.dimension, r)
    if y.shape[0] < size:
        raise DegreeOverflow(f"need {size} moments for degree {r}, got {y.shape[0]}")
    M = reference_moment_matrix(spec, r)
    try:
        cf = sla.cho_factor(M)
    except sla.LinAlgError as exc:
        raise SingularReference(str(exc)) from exc
    c = sla.cho_solve(cf, y[:size])
    return SignedDensity(PolyCoeffs(spec.with_degree(r), c))


def cdf_coefficients(density: SignedDensity) -> np.ndarray:
    """1D antiderivative of the density, vanishing at the left end of the box.

    Coefficients are returned in the density's own 1D family (Chebyshev in
    the scaled variable, or monomials in ``x``), at degree ``r + 1``.
    """
    spec = density.spec
    if spec.dimension != 1:
        raise DimensionNotOne("cumulative distributions need n = 1")
    a, b = spec.box[0]
    c = density.poly.coeffs
    if spec.family == CHEBYSHEV:
        return npcheb.chebint(c, lbnd=-1.0, scl=(b - a) / 2.0)
    return nppoly.polyint(c, lbnd=a)


def cdf(density: SignedDensity) -> Callable:
    """Callable ``R(x) = int_a^x rho``."""
    spec = density.spec
    C = cdf_coefficients(density)
    if spec.family == CHEBYSHEV:
        return lambda x: npcheb.chebval(spec.to_unit(np.reshape(x, (-1, 1)))[:, 0], C)
    return lambda x: nppoly.polyval(np.reshape(x, -1), C)


def cdf_and_l1(density: SignedDensity, exact_cdf: Callable, epsabs: float = 1e-10) -> float:
    """``int |R - R_exact| dx`` over the box.

    The difference is split at its sign changes (bracketed on a fine grid,
    then polished by Brent's method) and each piece is integrated by
    adaptive quadrature, so the integrand is smooth on every piece.
    """
    R = cdf(density)
    a, b = density.spec.box[0]

    def diff(x):
        return float(R(x)[0]) - float(exact_cdf(x))

    xs = np.linspace(a, b, 4001)
    d = R(xs) - np.asarray(exact_cdf(xs), dtype=float)
    cuts = [a]
    for i in np.nonzero(d[:-1] * d[1:] < 0)[0]:
        cuts.append(so.brentq(diff, xs[i], xs[i + 1], xtol=1e-14))
    cuts.append(b)
    tol = epsabs / max(1, len(cuts) - 1)
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        val, _ = si.quad(diff, lo, hi, epsabs=tol, epsrel=1e-10, limit=200)
        total += abs(val)
    return float(total)


def logistic_cdf(x) -> np.ndarray:
    """CDF of ``1 / (pi sqrt(1 - x^2))`` on ``[-1, 1]``."""
    return 0.5 + np.arcsin(np.clip(x, -1.0, 1.0)) / np.pi


# ---------------------------------------------------------------------------
# atomic measures


@dataclass
class AtomicMeasure:
    """Finite weighted sum of Dirac masses, with extraction diagnostics."""

    points: np.ndarray
    weights: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def moments(self, spec: BasisSpec) -> np.ndarray:
        return self.weights @ eval_basis(spec, self.points)

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "weights": self.weights.tolist(), "diagnostics": self.diagnostics}

    @classmethod
    def from_dict(cls, d: dict) -> "AtomicMeasure":
        return cls(np.asarray(d["points"]), np.asarray(d["weights"]), d.get("diagnostics", {}))


def _numerical_rank(s: np.ndarray, rank_tol: float) -> int:
    if s.size == 0 or s[0] <= 0:
        return 0
    return int(np.sum(s > rank_tol * s[0]))


def _rank_gap(s: np.ndarray, p: int) -> float:
    if p >= s.size:
        return np.inf
    if p == 0:
        return 0.0
    return float(s[p - 1] / max(s[p], 1e-300))


def _shift_rows(E: np.ndarray, i: int, family: str, n: int, t: int) -> list:
    """For each exponent row ``beta``, the expansion of ``s_i b_beta`` as ``(index, coeff)`` pairs."""
    out = []
    for beta in E:
        up = beta.copy()
        up[i] += 1
        terms = [(up, 1.0)]
        if family == CHEBYSHEV and beta[i] > 0:
            down = beta.copy()
            down[i] -= 1
            terms = [(up, 0.5), (down, 0.5)]
        out.append([(int(flat_index(e[None, :], n, t)[0]), c) for e, c in terms])
    return out


def extract_atoms(y, spec: BasisSpec, rank_tol: float = 1e-6, seed: int = 0, min_gap: float = 10.0,
                  residual_tol: float = 1e-4) -> AtomicMeasure:
    """Atomic measure whose moments reproduce ``y``, read off a flat moment matrix.

    The smallest order ``t`` at which ``rank M_t(y) = rank M_{t-1}(y)`` (with a
    clear singular-value gap) is used. A factor ``M_t = V V^T`` is reduced to
    ``p`` independent rows of degree ``<= t - 1``; multiplication by each
    scaled coordinate acts on those rows as a ``p x p`` matrix, and a random
    combination of these matrices is diagonalized to read off the atoms.

    Parameters
    ----------
    y : array_like
        Moment vector in the dictionary ``spec`` (degree ``l``).
    spec : BasisSpec
    rank_tol : float
        Singular values below ``rank_tol * s_max`` count as zero.
    seed : int
        Seed of the random combination.

    Raises
    ------
    ExtractionFailed
        No flat order with a clear rank gap, or the validation checks fail.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    n = spec.dimension
    l = spec.degree
    if y.shape[0] != spec.size:
        raise ExtractionFailed(f"moment vector has {y.shape[0]} entries, expected {spec.size}")
    tmax = l // 2
    if tmax < 1:
        raise ExtractionFailed("moment degree below 2")
    ranks, gaps, svals = [], [], []
    for t in range(tmax + 1):
        M = moment_matrix_map(None, 2 * t, spec.with_degree(2 * t))(y[: basis_size(n, 2 * t)])
        s = np.linalg.svd(M, compute_uv=False)
        p = _numerical_rank(s, rank_tol)
        ranks.append(p)
        gaps.append(_rank_gap(s, p))
        svals.append(s)
    order = None
    for t in range(1, tmax + 1):
        if ranks[t] == ranks[t - 1] and ranks[t] > 0 and gaps[t] >= min_gap and gaps[t - 1] >= min_gap:
            order = t
            break
    diag = {"ranks": ranks, "gaps": [float(g) for g in gaps]}
    if order is None:
        raise ExtractionFailed(f"no flat order with a rank gap >= {min_gap}: ranks {ranks}")
    t = order
    p = ranks[t]
    M = moment_matrix_map(None, 2 * t, spec.with_degree(2 * t))(y[: basis_size(n, 2 * t)])
    U, s, _ = np.linalg.svd(M)
    V = U[:, :p] * np.sqrt(s[:p])

    low = basis_size(n, t - 1)
    _, _, piv = sla.qr(V[:low].T, pivoting=True)
    B = np.sort(piv[:p])
    VB = V[B]
    if np.linalg.cond(VB) > 1e12:
        raise ExtractionFailed("selected rows of the factor are singular")
    VBinv = np.linalg.inv(VB)
    E = spec.with_degree(2 * t).exponents[B]
    N = []
    for i in range(n):
        rows = np.zeros((p, p))
        for r, terms in enumerate(_shift_rows(E, i, spec.family, n, t)):
            rows[r] = sum(c * V[j] for j, c in terms)
        N.append(rows @ VBinv)
    rng = np.random.default_rng(seed)
    lam = rng.random(n)
    lam /= lam.sum()
    Nc = sum(li * Ni for li, Ni in zip(lam, N))
    # a real Schur form is stabler than a plain eigensolve for near-defective cases
    T, Z = sla.schur(Nc, output="real")
    units = np.empty((p, n))
    for i in range(n):
        units[:, i] = np.diag(Z.T @ N[i] @ Z)
    pts = spec.from_unit(units) if spec.family == CHEBYSHEV else units

    G = eval_basis(spec.with_degree(2 * t), pts).T
    ytest = y[: basis_size(n, 2 * t)]
    w, *_ = np.linalg.lstsq(G, ytest, rcond=None)
    resid = float(np.max(np.abs(G @ w - ytest)))
    order_idx = np.lexsort(pts.T[::-1])
    pts, w = pts[order_idx], w[order_idx]
    diag.update({"order": t, "rank": p, "residual": resid})
    lo = np.array([a for a, _ in spec.box]) - 1e-4 * (1 + np.ptp(np.array(spec.box), axis=1))
    hi = np.array([b for _, b in spec.box]) + 1e-4 * (1 + np.ptp(np.array(spec.box), axis=1))
    if resid > residual_tol * max(1.0, float(np.max(np.abs(ytest)))):
        raise ExtractionFailed(f"moment reconstruction residual {resid:.2e}")
    if np.any(w < -1e-6) or abs(w.sum() - 1.0) > 1e-6:
        raise ExtractionFailed(f"weights invalid (min {w.min():.2e}, sum {w.sum():.8f})")
    if np.any(pts < lo) or np.any(pts > hi):
        raise ExtractionFailed("atom outside the domain box")
    return AtomicMeasure(pts, w, diag)


def dirac_moments(points, weights, spec: BasisSpec) -> np.ndarray:
    """Moments of ``sum_j w_j delta_{x_j}`` in the dictionary ``spec``."""
    return np.asarray(weights, dtype=float) @ eval_basis(spec, np.atleast_2d(points))


# ---------------------------------------------------------------------------
# expectations


def expectation(measure, g: PolyCoeffs) -> float:
    """``int g dmu`` for a signed density, atomic measure or histogram.

    Raises
    ------
    DegreeOverflow
        For a density whose dictionary differs from that of ``g``.
    """
    if isinstance(measure, AtomicMeasure):
        return float(measure.weights @ g(measure.points))
    if isinstance(measure, HistogramDensity):
        return measure.expectation(g)
    if isinstance(measure, SignedDensity):
        if g.spec.family != measure.spec.family or g.spec.box != measure.spec.box:
            raise DegreeOverflow("observable and density use different dictionaries")
        G = gram_matrix(g.spec, measure.spec, lebesgue_moments)
        return float(g.coeffs @ G @ measure.poly.coeffs)
    raise TypeError(f"unsupported measure type {type(measure).__name__}")


# ---------------------------------------------------------------------------
# histogram baseline


@dataclass
class HistogramDensity:
    """Piecewise-constant density on a uniform grid over the box."""

    box: tuple
    bins: tuple
    density: np.ndarray

    @property
    def edges(self) -> list[np.ndarray]:
        return [np.linspace(a, b, nb + 1) for (a, b), nb in zip(self.box, self.bins)]

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx = []
        for d, e in enumerate(self.edges):
            i = np.searchsorted(e, x[:, d], side="right") - 1
            idx.append(np.clip(i, 0, len(e) - 2))
        return self.density[tuple(idx)]

    def expectation(self, g: Callable, degree: int | None = None) -> float:
        """Exact per-cell integral of a polynomial ``g`` against the density.

        Uses tensor Gauss-Legendre rules with ``degree // 2 + 1`` nodes per
        cell and axis; ``degree`` defaults to ``g.degree``.
        """
        deg = int(degree if degree is not None else getattr(g, "degree"))
        q = deg // 2 + 1
        t, wt = np.polynomial.legendre.leggauss(q)
        axes_x, axes_w = [], []
        for e in self.edges:
            mid = 0.5 * (e[1:] + e[:-1])
            half = 0.5 * np.diff(e)
            axes_x.append((mid[:, None] + half[:, None] * t[None, :]).reshape(-1))
            axes_w.append((half[:, None] * wt[None, :]).reshape(-1))
        mesh = np.meshgrid(*axes_x, indexing="ij")
        wmesh = np.meshgrid(*axes_w, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        w = np.prod(np.stack([m.reshape(-1) for m in wmesh], axis=1), axis=1)
        dens = self.density
        for d in range(len(self.bins)):
            dens = np.repeat(dens, q, axis=d)
        return float(np.sum(w * dens.reshape(-1) * np.asarray(g(pts)).reshape(-1)))

    def to_dict(self) -> dict:
        return {"box": [list(b) for b in self.box], "bins": list(self.bins), "density": self.density.tolist()}


def histogram_density(snapshots, bins, box=None) -> HistogramDensity:
    """Normalized histogram of the snapshot points ``x_i``.

    Parameters
    ----------
    snapshots : SnapshotSet or array of shape (m, n)
    bins : int or sequence of int
        Number of cells per axis.
    box : sequence of (a, b), optional
        Defaults to the snapshot box.
    """
    pts = np.asarray(getattr(snapshots, "x", snapshots), dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[1]
    if box is None:
        box = getattr(snapshots, "box", None)
    if box is None:
        box = tuple((float(pts[:, d].min()), float(pts[:, d].max())) for d in range(n))
    box = tuple((float(a), float(b)) for a, b in box)
    nb = (int(bins),) * n if np.isscalar(bins) else tuple(int(b) for b in bins)
    if min(nb) < 1:
        raise ValueError("need at least one bin per axis")
    counts, _ = np.histogramdd(pts, bins=nb, range=box)
    vol = np.prod([(b - a) / k for (a, b), k in zip(box, nb)])
    return HistogramDensity(box, nb, counts / (counts.sum() * vol))


# ---------------------------------------------------------------------------
# double-well oracle


def double_well_density(x1, x2, sigma: float = 0.75) -> np.ndarray:
    """Unnormalized stationary density of the double-well SDE."""
    s = x1 + x2
    d = x1 - x2
    return np.exp(-((4.0 * s**2 - 1.0) ** 2 + 4.0 * d**2) / (2.0 * sigma**2))


def double_well_expectations(observables, sigma: float = 0.75, order: int = 200, box=((-1.0, 1.0), (-1.0, 1.0))):
    """Expectations of callables ``g(points)`` under the exact double-well density.

    Tensor Gauss-Legendre quadrature over ``box`` is used both for the
    integrals and for the normalizing constant.
    """
    t, w = np.polynomial.legendre.leggauss(order)
    (a1, b1), (a2, b2) = box
    x1 = 0.5 * (b1 - a1) * t + 0.5 * (a1 + b1)
    x2 = 0.5 * (b2 - a2) * t + 0.5 * (a2 + b2)
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    W = np.outer(w * 0.5 * (b1 - a1), w * 0.5 * (b2 - a2))
    rho = double_well_density(X1, X2, sigma) * W
    rho /= rho.sum()
    pts = np.stack([X1.reshape(-1), X2.reshape(-1)], axis=1)
    return np.array([float(np.sum(rho.reshape(-1) * np.asarray(g(pts)).reshape(-1))) for g in observables])
