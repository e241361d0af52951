"""Graded polynomial dictionaries over boxes in R^n.

Two families are supported: tensor Chebyshev polynomials ``T_a(s_1)...T_b(s_n)``
where ``s`` is the point mapped affinely from the box onto ``[-1, 1]^n``, and
plain monomials ``x^alpha`` in the original coordinates. Index sets are
ordered by total degree and, within a degree, by decreasing exponent tuples,
so ``(2, 2)`` gives ``(0,0), (1,0), (0,1), (2,0), (1,1), (0,2)``.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import chebyshev as npcheb

from .errors import DegreeOrder, DegreeOverflow, DimensionMismatch, NonFiniteInput

CHEBYSHEV = "chebyshev"
MONOMIAL = "monomial"
FAMILIES = (CHEBYSHEV, MONOMIAL)

MultiIndex = tuple


class OutsideBoxWarning(UserWarning):
    """Chebyshev basis evaluated at points outside the declared box."""


# ---------------------------------------------------------------------------
# index sets


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@functools.lru_cache(maxsize=None)
def _index_set_cached(n: int, k: int) -> tuple:
    out = []
    for d in range(k + 1):
        out.extend(_compositions(d, n))
    return tuple(out)


def index_set(n: int, k: int) -> list[MultiIndex]:
    """All exponents of total degree <= ``k`` in ``n`` variables, graded order."""
    if n < 1 or k < 0:
        raise ValueError(f"need n >= 1 and k >= 0, got n={n}, k={k}")
    return list(_index_set_cached(n, k))


def basis_size(n: int, k: int) -> int:
    return math.comb(n + k, k)


@functools.lru_cache(maxsize=None)
def exponent_array(n: int, k: int) -> np.ndarray:
    arr = np.array(_index_set_cached(n, k), dtype=np.int64).reshape(-1, n)
    arr.setflags(write=False)
    return arr


@functools.lru_cache(maxsize=64)
def _lookup_table(n: int, k: int) -> np.ndarray:
    table = np.full((k + 1,) * n, -1, dtype=np.int64)
    table[tuple(exponent_array(n, k).T)] = np.arange(basis_size(n, k))
    table.setflags(write=False)
    return table


def flat_index(exps: np.ndarray, n: int, k: int) -> np.ndarray:
    """Positions of exponent rows ``exps`` (shape ``(m, n)``) in ``index_set(n, k)``.

    Rows with total degree above ``k`` map to -1.
    """
    exps = np.asarray(exps, dtype=np.int64).reshape(-1, n)
    out = np.full(exps.shape[0], -1, dtype=np.int64)
    ok = (exps.sum(axis=1) <= k) & (exps.min(axis=1, initial=0) >= 0)
    if ok.any():
        out[ok] = _lookup_table(n, k)[tuple(exps[ok].T)]
    return out


# ---------------------------------------------------------------------------
# basis specification


@dataclass(frozen=True)
class BasisSpec:
    """A graded dictionary: family, dimension, maximal degree and domain box."""

    family: str
    dimension: int
    degree: int
    box: tuple = field(default=None)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown basis family {self.family!r}")
        if self.dimension < 1 or self.degree < 0:
            raise ValueError("dimension must be >= 1 and degree >= 0")
        box = self.box
        if box is None:
            box = ((-1.0, 1.0),) * self.dimension
        box = tuple((float(a), float(b)) for a, b in np.asarray(box, dtype=float).reshape(-1, 2))
        if len(box) != self.dimension:
            raise DimensionMismatch(f"box has {len(box)} axes, dimension is {self.dimension}")
        if any(not (b > a) for a, b in box):
            raise ValueError(f"degenerate box {box}")
        object.__setattr__(self, "box", box)

    @property
    def size(self) -> int:
        return basis_size(self.dimension, self.degree)

    @property
    def indices(self) -> list[MultiIndex]:
        return index_set(self.dimension, self.degree)

    @property
    def exponents(self) -> np.ndarray:
        return exponent_array(self.dimension, self.degree)

    @property
    def lower(self) -> np.ndarray:
        return np.array([a for a, _ in self.box])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b for _, b in self.box])

    def with_degree(self, degree: int) -> "BasisSpec":
        return BasisSpec(self.family, self.dimension, int(degree), self.box)

    def index_of(self, alpha: Iterable[int]) -> int:
        alpha = tuple(int(a) for a in alpha)
        pos = flat_index(np.array([alpha]), self.dimension, self.degree)[0]
        if pos < 0:
            raise DegreeOverflow(f"{alpha} is not in the degree-{self.degree} dictionary")
        return int(pos)

    def to_unit(self, x: np.ndarray) -> np.ndarray:
        """Affine map of the box onto ``[-1, 1]^n``."""
        lo, hi = self.lower, self.upper
        return (2.0 * np.asarray(x, dtype=float) - (lo + hi)) / (hi - lo)

    def from_unit(self, s: np.ndarray) -> np.ndarray:
        lo, hi = self.lower, self.upper
        return 0.5 * (np.asarray(s, dtype=float) * (hi - lo) + (lo + hi))

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "dimension": self.dimension,
            "degree": self.degree,
            "box": [list(ab) for ab in self.box],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        return cls(d["family"], int(d["dimension"]), int(d["degree"]), tuple(map(tuple, d["box"])))


# ---------------------------------------------------------------------------
# evaluation


def _tables_1d(spec: BasisSpec, x: np.ndarray, degree: int) -> list[np.ndarray]:
    """Per-axis tables ``tab[d][i, j] = b_j(x_i[d])`` for the 1D family members."""
    tabs = []
    coords = spec.to_unit(x) if spec.family == CHEBYSHEV else x
    for d in range(spec.dimension):
        s = coords[:, d]
        tab = np.empty((s.shape[0], degree + 1))
        tab[:, 0] = 1.0
        if degree >= 1:
            tab[:, 1] = s
        if spec.family == CHEBYSHEV:
            for j in range(2, degree + 1):
                tab[:, j] = 2.0 * s * tab[:, j - 1] - tab[:, j - 2]
        else:
            for j in range(2, degree + 1):
                tab[:, j] = s * tab[:, j - 1]
        tabs.append(tab)
    return tabs


def as_points(x, n: int) -> tuple[np.ndarray, bool]:
    """Normalize ``x`` to an ``(m, n)`` array; also report whether it was one point.

    A scalar is one point in one dimension; a flat array is one point when
    ``n > 1`` and a batch of scalar points when ``n == 1``.
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        single, arr = True, arr.reshape(1, 1)
    elif arr.ndim == 1:
        single = n > 1
        arr = arr.reshape(1, -1) if single else arr.reshape(-1, 1)
    else:
        single = False
    if arr.shape[1] != n:
        raise DimensionMismatch(f"points have {arr.shape[1]} coordinates, expected {n}")
    return arr, single


def _as_points(spec: BasisSpec, x) -> tuple[np.ndarray, bool]:
    pts, single = as_points(x, spec.dimension)
    if not np.all(np.isfinite(pts)):
        raise NonFiniteInput("basis evaluated at a non-finite point")
    return pts, single


def outside_box(spec: BasisSpec, x: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Boolean mask of points outside the (slightly inflated) box."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    width = spec.upper - spec.lower
    return np.any((x < spec.lower - tol * width) | (x > spec.upper + tol * width), axis=1)


def eval_basis(spec: BasisSpec, x) -> np.ndarray:
    """Evaluate every dictionary element at ``x``.

    Parameters
    ----------
    spec : BasisSpec
    x : array_like
        A single point of shape ``(n,)`` or a batch of shape ``(m, n)``. In one
        dimension a flat array of length ``m`` is read as ``m`` points.

    Returns
    -------
    ndarray
        Shape ``(size,)`` for a single point, ``(m, size)`` for a batch. The
        columns follow ``spec.indices`` and column 0 is identically 1.
    """
    pts, single = _as_points(spec, x)
    if spec.family == CHEBYSHEV and outside_box(spec, pts).any():
        warnings.warn("Chebyshev basis evaluated outside its box", OutsideBoxWarning, stacklevel=2)
    tabs = _tables_1d(spec, pts, spec.degree)
    E = spec.exponents
    out = np.take(tabs[0], E[:, 0], axis=1)
    if spec.dimension > 1:
        # in place: large temporaries are the dominant cost for big batches
        tmp = np.empty_like(out)
        for d in range(1, spec.dimension):
            np.take(tabs[d], E[:, d], axis=1, out=tmp)
            out *= tmp
    return out[0] if single else out


def eval_basis_derivatives(spec: BasisSpec, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values, gradients and Hessians of all dictionary elements at a batch of points.

    Returns arrays of shapes ``(m, size)``, ``(m, size, n)`` and ``(m, size, n, n)``;
    derivatives are taken with respect to the original coordinates.
    """
    pts, _ = _as_points(spec, x)
    K = spec.degree
    n = spec.dimension
    tabs = _tables_1d(spec, pts, K)
    if spec.family == CHEBYSHEV:
        D1 = npcheb.chebder(np.eye(K + 1), axis=0) if K >= 1 else np.zeros((0, 1))
        D2 = npcheb.chebder(np.eye(K + 1), m=2, axis=0) if K >= 2 else np.zeros((0, K + 1))
        scale = 2.0 / (spec.upper - spec.lower)
    else:
        D1 = np.zeros((max(K, 0), K + 1))
        D2 = np.zeros((max(K - 1, 0), K + 1))
        for j in range(1, K + 1):
            D1[j - 1, j] = j
        for j in range(2, K + 1):
            D2[j - 2, j] = j * (j - 1)
        scale = np.ones(n)
    d1 = [t[:, : D1.shape[0]] @ D1 * scale[d] for d, t in enumerate(tabs)]
    d2 = [t[:, : D2.shape[0]] @ D2 * scale[d] ** 2 for d, t in enumerate(tabs)]
    E = spec.exponents
    cols = [t[:, E[:, d]] for d, t in enumerate(tabs)]
    dcols = [g[:, E[:, d]] for d, g in enumerate(d1)]
    ddcols = [h[:, E[:, d]] for d, h in enumerate(d2)]
    m, N = pts.shape[0], spec.size
    val = np.prod(cols, axis=0)
    grad = np.empty((m, N, n))
    hess = np.empty((m, N, n, n))
    for i in range(n):
        g = dcols[i].copy()
        for d in range(n):
            if d != i:
                g *= cols[d]
        grad[:, :, i] = g
        for j in range(i, n):
            if i == j:
                h = ddcols[i].copy()
                others = [d for d in range(n) if d != i]
            else:
                h = dcols[i] * dcols[j]
                others = [d for d in range(n) if d not in (i, j)]
            for d in others:
                h = h * cols[d]
            hess[:, :, i, j] = h
            hess[:, :, j, i] = h
    return val, grad, hess


# ---------------------------------------------------------------------------
# degree restriction and products


def extraction_matrix(k: int, l: int, spec: BasisSpec) -> sp.csr_matrix:
    """0/1 matrix selecting the degree-``k`` dictionary out of the degree-``l`` one."""
    if k > l:
        raise DegreeOrder(f"extraction needs k <= l, got k={k}, l={l}")
    kx = basis_size(spec.dimension, k)
    lx = basis_size(spec.dimension, l)
    return sp.csr_matrix((np.ones(kx), (np.arange(kx), np.arange(kx))), shape=(kx, lx))


def linearize_products(E1: np.ndarray, E2: np.ndarray, family: str):
    """Expand pairwise products ``b_{E1[i]} * b_{E2[i]}`` in the same family.

    Returns ``(pair, exps, coeffs)`` such that
    ``b_{E1[i]} b_{E2[i]} = sum_{pair == i} coeffs * b_{exps}``.
    Duplicate exponents for the same pair are not merged.
    """
    E1 = np.asarray(E1, dtype=np.int64)
    E2 = np.asarray(E2, dtype=np.int64)
    P, n = E1.shape
    if family == MONOMIAL:
        return np.arange(P), E1 + E2, np.ones(P)
    plus = E1 + E2
    minus = np.abs(E1 - E2)
    pats = np.array(list(np.ndindex(*(2,) * n)), dtype=bool)  # True -> |a-b|
    pair = np.tile(np.arange(P), len(pats))
    exps = np.concatenate([np.where(p, minus, plus) for p in pats])
    coeffs = np.full(P * len(pats), 0.5**n)
    return pair, exps, coeffs


def product_linearize(alpha: Sequence[int], beta: Sequence[int], spec: BasisSpec) -> dict:
    """Expansion of ``b_alpha * b_beta`` as ``{multi-index: coefficient}``."""
    a = np.array([alpha], dtype=np.int64)
    b = np.array([beta], dtype=np.int64)
    if a.shape[1] != spec.dimension or b.shape[1] != spec.dimension:
        raise DimensionMismatch("multi-index length differs from the dimension")
    _, exps, coeffs = linearize_products(a, b, spec.family)
    out: dict = {}
    for e, c in zip(map(tuple, exps.tolist()), coeffs):
        out[e] = out.get(e, 0.0) + float(c)
    return out


# ---------------------------------------------------------------------------
# coefficient vectors


@dataclass
class PolyCoeffs:
    """A polynomial ``c . p(x)`` in the dictionary described by ``spec``."""

    spec: BasisSpec
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if self.coeffs.shape[0] != self.spec.size:
            raise DimensionMismatch(
                f"{self.coeffs.shape[0]} coefficients for a dictionary of size {self.spec.size}"
            )

    def __call__(self, x) -> np.ndarray:
        return eval_basis(self.spec, x) @ self.coeffs

    @property
    def degree(self) -> int:
        nz = np.nonzero(self.coeffs)[0]
        if nz.size == 0:
            return 0
        return int(self.spec.exponents[nz].sum(axis=1).max())

    def to_degree(self, degree: int) -> "PolyCoeffs":
        if degree < self.degree:
            raise DegreeOverflow(f"cannot truncate a degree-{self.degree} polynomial to {degree}")
        spec = self.spec.with_degree(degree)
        c = np.zeros(spec.size)
        keep = min(spec.size, self.spec.size)
        c[:keep] = self.coeffs[:keep]
        return PolyCoeffs(spec, c)

    @classmethod
    def from_terms(cls, spec: BasisSpec, terms: dict) -> "PolyCoeffs":
        c = np.zeros(spec.size)
        for alpha, v in terms.items():
            c[spec.index_of(alpha)] += v
        return cls(spec, c)

    @classmethod
    def interpolate(cls, spec: BasisSpec, fun: Callable) -> "PolyCoeffs":
        """Coefficients of ``fun`` (vectorized over ``(m, n)`` points) at ``spec.degree``.

        Exact whenever ``fun`` is a polynomial of degree <= ``spec.degree``.
        """
        grid = InterpolationGrid(spec)
        vals = np.asarray(fun(grid.nodes), dtype=float).reshape(grid.nodes.shape[0], -1)
        return cls(spec, grid.coefficients(vals)[:, 0])


class InterpolationGrid:
    """Tensor grid of Chebyshev points with an exact inverse evaluation transform.

    ``(degree + 1)^n`` first-kind Chebyshev points inside the box. Values of a
    polynomial of total degree <= ``degree`` at the nodes determine its
    dictionary coefficients exactly.
    """

    def __init__(self, spec: BasisSpec):
        self.spec = spec
        q = spec.degree + 1
        t = np.cos(np.pi * (np.arange(q) + 0.5) / q)[::-1]
        self.unit_nodes_1d = t
        axes = [spec.from_unit(np.tile(t[:, None], (1, spec.dimension)))[:, d] for d in range(spec.dimension)]
        mesh = np.meshgrid(*axes, indexing="ij")
        self.nodes = np.stack([g.reshape(-1) for g in mesh], axis=1)
        self._inverses = []
        for d in range(spec.dimension):
            sub = BasisSpec(spec.family, 1, spec.degree, (spec.box[d],))
            V = eval_basis(sub, axes[d].reshape(-1, 1))
            self._inverses.append(np.linalg.inv(V))

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        """Map node values of shape ``(q^n, R)`` to dictionary coefficients ``(size, R)``."""
        spec = self.spec
        q = spec.degree + 1
        n = spec.dimension
        R = values.shape[1]
        T = values.reshape((q,) * n + (R,))
        for d in range(n):
            T = np.moveaxis(np.tensordot(self._inverses[d], T, axes=([1], [d])), 0, d)
        return T[tuple(spec.exponents.T)]


def compose_with_map(g: PolyCoeffs, f: Sequence, l: int) -> PolyCoeffs:
    """Coefficients of ``g o f`` in the degree-``l`` dictionary of ``g``'s family and box.

    Parameters
    ----------
    g : PolyCoeffs
    f : sequence of n callables
        Polynomial components of the map. Each must expose ``degree`` and be
        vectorized over ``(m, n)`` point arrays (``PolyCoeffs`` and
        ``MonomialPoly`` both qualify).
    l : int
        Target degree.
    """
    n = g.spec.dimension
    if len(f) != n:
        raise DimensionMismatch(f"map has {len(f)} components, dictionary dimension is {n}")
    dmax = max(int(fi.degree) for fi in f)
    if g.degree * dmax > l:
        raise DegreeOverflow(f"deg(g o f) may reach {g.degree * dmax} > l={l}")
    target = g.spec.with_degree(l)

    def gof(x):
        fx = np.stack([np.asarray(fi(x), dtype=float).reshape(-1) for fi in f], axis=1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OutsideBoxWarning)
            return eval_basis(g.spec, fx) @ g.coeffs

    return PolyCoeffs.interpolate(target, gof)


# ---------------------------------------------------------------------------
# integrals


def _lebesgue_1d(family: str, a: float, b: float, degree: int) -> np.ndarray:
    j = np.arange(degree + 1)
    if family == CHEBYSHEV:
        jf = j.astype(float)
        even = j % 2 == 0
        vals = np.zeros(degree + 1)
        vals[even] = 2.0 / (1.0 - jf[even] ** 2)
        return vals * (b - a) / 2.0
    return (b ** (j + 1) - a ** (j + 1)) / (j + 1)


def lebesgue_moments(spec: BasisSpec) -> np.ndarray:
    """Exact integrals of every dictionary element over the box."""
    E = spec.exponents
    out = np.ones(spec.size)
    for d, (a, b) in enumerate(spec.box):
        out *= _lebesgue_1d(spec.family, a, b, spec.degree)[E[:, d]]
    return out


def gram_matrix(spec_a: BasisSpec, spec_b: BasisSpec, moments: Callable[[BasisSpec], np.ndarray]) -> np.ndarray:
    """``G[i, j] = L(b_i b_j)`` for dictionaries of possibly different degree.

    ``moments(spec)`` must return the values of the linear functional ``L`` on
    every element of ``spec``; it is called once at degree
    ``spec_a.degree + spec_b.degree``.
    """
    if spec_a.family != spec_b.family or spec_a.box != spec_b.box:
        raise DimensionMismatch("gram_matrix needs matching families and boxes")
    n = spec_a.dimension
    top = spec_a.with_degree(spec_a.degree + spec_b.degree)
    mom = moments(top)
    Ea, Eb = spec_a.exponents, spec_b.exponents
    ia, ib = np.meshgrid(np.arange(Ea.shape[0]), np.arange(Eb.shape[0]), indexing="ij")
    ia, ib = ia.ravel(), ib.ravel()
    pair, exps, coeffs = linearize_products(Ea[ia], Eb[ib], spec_a.family)
    pos = flat_index(exps, n, top.degree)
    G = np.zeros(ia.shape[0])
    np.add.at(G, pair, coeffs * mom[pos])
    return G.reshape(Ea.shape[0], Eb.shape[0])


# ---------------------------------------------------------------------------
# polynomials with explicit monomial terms (used to describe known systems)


class MonomialPoly:
    """Sparse polynomial ``sum_alpha c_alpha x^alpha`` in original coordinates."""

    def __init__(self, terms: dict, dimension: int | None = None):
        clean = {}
        for alpha, c in terms.items():
            alpha = (int(alpha),) if np.ndim(alpha) == 0 else tuple(int(a) for a in alpha)
            if c != 0:
                clean[alpha] = clean.get(alpha, 0.0) + float(c)
        if dimension is None:
            if not clean:
                raise ValueError("dimension needed for the zero polynomial")
            dimension = len(next(iter(clean)))
        self.dimension = int(dimension)
        self.terms = {a: c for a, c in clean.items() if c != 0}
        if any(len(a) != self.dimension for a in self.terms):
            raise DimensionMismatch("inconsistent exponent lengths")

    @property
    def exponents(self) -> np.ndarray:
        return np.array(list(self.terms), dtype=np.int64).reshape(-1, self.dimension)

    @property
    def coeffs(self) -> np.ndarray:
        return np.array(list(self.terms.values()), dtype=float)

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self.terms), default=0)

    def __call__(self, x) -> np.ndarray:
        pts, single = as_points(x, self.dimension)
        out = np.zeros(pts.shape[0])
        for alpha, c in self.terms.items():
            out += c * np.prod(pts ** np.array(alpha), axis=1)
        return out[0] if single else out

    def __repr__(self):
        return f"MonomialPoly({self.terms!r})"

    def to_dict(self) -> dict:
        return {"dimension": self.dimension, "terms": [[list(a), c] for a, c in self.terms.items()]}

    @classmethod
    def from_dict(cls, d: dict) -> "MonomialPoly":
        return cls({tuple(a): c for a, c in d["terms"]}, d["dimension"])


def field_arrays(components: Sequence[MonomialPoly]):
    """Flatten a polynomial vector field into ``(component, exponents, coeffs)`` arrays."""
    comp, exps, coeffs = [], [], []
    n = components[0].dimension
    for i, p in enumerate(components):
        for alpha, c in p.terms.items():
            comp.append(i)
            exps.append(alpha)
            coeffs.append(c)
    return (
        np.array(comp, dtype=np.int64),
        np.array(exps, dtype=np.int64).reshape(-1, n),
        np.array(coeffs, dtype=float),
    )
