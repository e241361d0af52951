"""Moment relaxation of the invariant-measure problem.

The decision variable is the pseudo-moment vector ``y`` of length ``l_x``
(the degree-``l`` dictionary). Constraints are ``L y = 0`` for a Lie matrix
``L``, ``y_0 = 1``, and positive semidefiniteness of the moment matrix and
of one localizing matrix per polynomial describing the domain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .edmd import LieMatrix
from .errors import DegreeOverflow, DimensionMismatch
from .polybasis import (
    CHEBYSHEV,
    BasisSpec,
    PolyCoeffs,
    basis_size,
    exponent_array,
    flat_index,
    linearize_products,
)

# ---------------------------------------------------------------------------
# domain


@dataclass
class SemialgebraicSet:
    """``{x : sigma_j(x) >= 0 for all j}`` with ``sigma_0 = 1`` implicit."""

    spec: BasisSpec
    polys: list = field(default_factory=list)
    names: list = field(default_factory=list)

    def __post_init__(self):
        for p in self.polys:
            if p.spec.dimension != self.spec.dimension or p.spec.family != self.spec.family:
                raise DimensionMismatch("localizing polynomial uses a different dictionary")
        if not self.names:
            self.names = [f"sigma{j + 1}" for j in range(len(self.polys))]

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    @classmethod
    def box(cls, spec: BasisSpec) -> "SemialgebraicSet":
        """The dictionary box, one quadratic per axis.

        Chebyshev dictionaries use ``1 - s_i^2 = (T_0 - T_2(s_i)) / 2`` in the
        scaled coordinate; monomial ones use ``(x_i - a_i)(b_i - x_i)``.
        """
        s2 = spec.with_degree(2)
        polys = []
        for i, (a, b) in enumerate(s2.box):
            e2 = [0] * s2.dimension
            e2[i] = 2
            e1 = [0] * s2.dimension
            e1[i] = 1
            zero = (0,) * s2.dimension
            if s2.family == CHEBYSHEV:
                terms = {zero: 0.5, tuple(e2): -0.5}
            else:
                terms = {zero: -a * b, tuple(e1): a + b, tuple(e2): -1.0}
            polys.append(PolyCoeffs.from_terms(s2, terms))
        return cls(s2, polys, [f"box{i + 1}" for i in range(s2.dimension)])

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "names": self.names,
                "polys": [{"spec": p.spec.to_dict(), "coeffs": p.coeffs.tolist()} for p in self.polys]}

    @classmethod
    def from_dict(cls, d: dict) -> "SemialgebraicSet":
        polys = [PolyCoeffs(BasisSpec.from_dict(p["spec"]), p["coeffs"]) for p in d["polys"]]
        return cls(BasisSpec.from_dict(d["spec"]), polys, list(d["names"]))


# ---------------------------------------------------------------------------
# moment and localizing matrices


@dataclass
class LocalizingMap:
    """Linear map ``y -> M(sigma y)`` onto symmetric ``size x size`` matrices.

    ``rows[r]`` (a sparse row over ``y``) gives entry ``(iu[r], ju[r])`` of the
    upper triangle.
    """

    name: str
    size: int
    iu: np.ndarray
    ju: np.ndarray
    rows: sp.csr_matrix

    def __call__(self, y) -> np.ndarray:
        vals = self.rows @ np.asarray(y, dtype=float)
        M = np.zeros((self.size, self.size))
        M[self.iu, self.ju] = vals
        M[self.ju, self.iu] = vals
        return M

    def svec_matrix(self) -> sp.csr_matrix:
        """Rows of ``svec(M(sigma y))``: upper triangle row by row, off-diagonals times sqrt(2)."""
        scale = np.where(self.iu == self.ju, 1.0, np.sqrt(2.0))
        return sp.csr_matrix(sp.diags(scale) @ self.rows)

    def to_dict(self) -> dict:
        coo = self.rows.tocoo()
        return {"name": self.name, "size": self.size, "iu": self.iu.tolist(), "ju": self.ju.tolist(),
                "shape": list(coo.shape), "triplets": [coo.row.tolist(), coo.col.tolist(), coo.data.tolist()]}

    @classmethod
    def from_dict(cls, d: dict) -> "LocalizingMap":
        r, c, v = d["triplets"]
        rows = sp.csr_matrix((v, (r, c)), shape=tuple(d["shape"]))
        return cls(d["name"], d["size"], np.array(d["iu"], dtype=np.int64), np.array(d["ju"], dtype=np.int64), rows)


def localizing_degree(l: int, sigma_degree: int) -> int:
    return (l - sigma_degree) // 2


def moment_matrix_map(sigma: PolyCoeffs | None, l: int, spec: BasisSpec, name: str = "") -> LocalizingMap:
    """Linear map from degree-``l`` moments to ``M(sigma y)``.

    Entry ``(a, b)`` is the linear functional ``y -> sum_g c_g y_g`` where
    ``b_a b_b sigma = sum_g c_g b_g``. ``sigma=None`` gives the moment matrix.

    Raises
    ------
    DegreeOverflow
        If ``deg sigma > l``.
    """
    n = spec.dimension
    if sigma is None:
        sig_e = np.zeros((1, n), dtype=np.int64)
        sig_c = np.ones(1)
        dsig = 0
    else:
        nz = np.nonzero(sigma.coeffs)[0]
        sig_e = sigma.spec.exponents[nz]
        sig_c = sigma.coeffs[nz]
        dsig = sigma.degree
    if dsig > l:
        raise DegreeOverflow(f"deg sigma = {dsig} exceeds l = {l}")
    g = localizing_degree(l, dsig)
    s = basis_size(n, g)
    E = exponent_array(n, g)
    iu, ju = np.triu_indices(s)
    pair, exps, co = linearize_products(E[iu], E[ju], spec.family)
    # multiply every product term by every term of sigma
    T = len(sig_c)
    pair = np.repeat(pair, T)
    co = np.repeat(co, T) * np.tile(sig_c, len(exps))
    e1 = np.repeat(exps, T, axis=0)
    e2 = np.tile(sig_e, (len(exps), 1))
    sub, exps2, co2 = linearize_products(e1, e2, spec.family)
    pair = pair[sub]
    co = co[sub] * co2
    cols = flat_index(exps2, n, l)
    if np.any(cols < 0):
        raise DegreeOverflow("localizing entry exceeds degree l")
    rows = sp.csr_matrix((co, (pair, cols)), shape=(len(iu), basis_size(n, l)))
    rows.sum_duplicates()
    rows.eliminate_zeros()
    return LocalizingMap(name or ("moment" if sigma is None else "localizing"), s, iu, ju, rows)


# ---------------------------------------------------------------------------
# objectives


@dataclass
class Linear:
    """``F(y) = c . y + offset`` with ``c`` indexed by the dictionary."""

    c: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)

    def value(self, y) -> float:
        y = np.asarray(y, dtype=float)
        return float(self.c @ y[: self.c.size] + self.offset)

    def to_dict(self) -> dict:
        return {"type": "linear", "c": self.c.tolist(), "offset": self.offset}


@dataclass
class MomentFit:
    """``F(y) = sum_i w_i (y_{I_i} - t_i)^2`` over selected dictionary indices."""

    indices: np.ndarray
    targets: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        self.targets = np.asarray(self.targets, dtype=float).reshape(-1)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if not (self.indices.size == self.targets.size == self.weights.size):
            raise DimensionMismatch("indices, targets and weights must have equal length")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")

    @classmethod
    def relative(cls, indices, targets) -> "MomentFit":
        """Weights ``1 / target^2`` (relative squared error)."""
        t = np.asarray(targets, dtype=float)
        return cls(indices, t, 1.0 / t ** 2)

    def value(self, y) -> float:
        y = np.asarray(y, dtype=float)
        return float(np.sum(self.weights * (y[self.indices] - self.targets) ** 2))

    def to_dict(self) -> dict:
        return {"type": "momentfit", "indices": self.indices.tolist(), "targets": self.targets.tolist(),
                "weights": self.weights.tolist()}


def objective_from_dict(d: dict):
    if d["type"] == "linear":
        return Linear(d["c"], d.get("offset", 0.0))
    return MomentFit(d["indices"], d["targets"], d["weights"])


def randomized_objectives(k: int, count: int, seed: int, dimension: int = 1) -> list[Linear]:
    """Linear costs uniform on the unit sphere of the non-constant degree-``k`` coefficients."""
    if count < 1:
        raise ValueError("count must be at least 1")
    kx = basis_size(dimension, k)
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((count, kx - 1))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return [Linear(np.concatenate([[0.0], row])) for row in g]


# ---------------------------------------------------------------------------
# assembled problem


@dataclass
class SOCBlock:
    """``|rows @ u - offset| <= u[t_index]``."""

    rows: sp.csr_matrix
    offset: np.ndarray
    t_index: int


@dataclass
class MomentProblem:
    """Moment SDP in the variable ``u = (y, extra...)``.

    Attributes
    ----------
    spec : BasisSpec
        Degree-``l`` dictionary.
    k, l : int
    A_eq, b_eq : equality constraints ``A_eq u = b_eq``; the last row is ``y_0 = 1``.
    blocks : list of LocalizingMap
        PSD constraints; 1x1 blocks are scalar inequalities.
    objective : Linear or MomentFit
    soc : list of SOCBlock
    n_var : int
    fit : MomentFit or None
        The quadratic objective a lifted problem came from.
    """

    spec: BasisSpec
    k: int
    l: int
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    blocks: list
    objective: object
    soc: list = field(default_factory=list)
    n_var: int = 0
    fit: MomentFit | None = None

    def __post_init__(self):
        if self.n_var == 0:
            self.n_var = self.spec.size
        self.A_eq = sp.csr_matrix(self.A_eq)
        self.b_eq = np.asarray(self.b_eq, dtype=float)

    @property
    def y_size(self) -> int:
        return self.spec.size

    def moment_vector(self, u) -> np.ndarray:
        return np.asarray(u, dtype=float)[: self.y_size]

    def objective_value(self, u) -> float:
        return self.objective.value(u)

    def diagnostics(self, u) -> dict:
        """Equality residual and smallest eigenvalue of every PSD block at ``u``."""
        u = np.asarray(u, dtype=float)
        y = u[: self.y_size]
        eigs = {b.name: float(np.linalg.eigvalsh(b(y)).min()) for b in self.blocks}
        out = {"eq_residual": float(np.max(np.abs(self.A_eq @ u - self.b_eq), initial=0.0)), "min_eig": eigs}
        for j, s in enumerate(self.soc):
            out[f"soc{j}_gap"] = float(u[s.t_index] - np.linalg.norm(s.rows @ u - s.offset))
        return out

    def to_dict(self) -> dict:
        eq = self.A_eq.tocoo()
        return {
            "format": "invmeasure-moment-problem/1",
            "spec": self.spec.to_dict(),
            "k": self.k,
            "l": self.l,
            "n_var": self.n_var,
            "eq": {"shape": list(eq.shape), "triplets": [eq.row.tolist(), eq.col.tolist(), eq.data.tolist()],
                   "rhs": self.b_eq.tolist()},
            "blocks": [b.to_dict() for b in self.blocks],
            "soc": [{"shape": list(s.rows.shape), "triplets": _triplets(s.rows), "offset": s.offset.tolist(),
                     "t_index": s.t_index} for s in self.soc],
            "objective": self.objective.to_dict(),
            "fit": None if self.fit is None else self.fit.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MomentProblem":
        r, c, v = d["eq"]["triplets"]
        A = sp.csr_matrix((v, (r, c)), shape=tuple(d["eq"]["shape"]))
        soc = []
        for s in d["soc"]:
            rr, cc, vv = s["triplets"]
            soc.append(SOCBlock(sp.csr_matrix((vv, (rr, cc)), shape=tuple(s["shape"])), np.array(s["offset"]),
                                s["t_index"]))
        fit = d.get("fit")
        return cls(BasisSpec.from_dict(d["spec"]), d["k"], d["l"], A, np.array(d["eq"]["rhs"]),
                   [LocalizingMap.from_dict(b) for b in d["blocks"]], objective_from_dict(d["objective"]), soc,
                   d["n_var"], None if fit is None else objective_from_dict(fit))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()))
        return path

    @classmethod
    def load(cls, path) -> "MomentProblem":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_objective(self, objective) -> "MomentProblem":
        """Same constraints, new objective (lifted problems are not re-lifted)."""
        if self.soc:
            raise ValueError("swap the objective on the unlifted problem")
        return replace(self, objective=objective, fit=None)


def _triplets(M) -> list:
    coo = sp.coo_matrix(M)
    return [coo.row.tolist(), coo.col.tolist(), coo.data.tolist()]


def assemble_problem(L: LieMatrix, X: SemialgebraicSet, objective, drop_constant_row: bool = True) -> MomentProblem:
    """Stack invariance rows, the normalization row and the PSD blocks.

    The row of ``L`` for the constant function is left out by default since
    it is identically zero for exact generators and rounding noise for EDMD.
    """
    spec = L.spec
    if X.dimension != spec.dimension:
        raise DimensionMismatch(f"domain dimension {X.dimension} != dictionary dimension {spec.dimension}")
    if X.spec.family != spec.family or X.spec.box != spec.box:
        raise DimensionMismatch("domain polynomials use a different dictionary than the Lie matrix")
    n_y = spec.size
    rows = L.entries[1:] if drop_constant_row else L.entries
    A_eq = sp.vstack([sp.csr_matrix(rows), sp.csr_matrix(([1.0], ([0], [0])), shape=(1, n_y))]).tocsr()
    A_eq.eliminate_zeros()
    b_eq = np.zeros(A_eq.shape[0])
    b_eq[-1] = 1.0
    blocks = [moment_matrix_map(None, L.l, spec, "moment")]
    for name, p in zip(X.names, X.polys):
        blocks.append(moment_matrix_map(p, L.l, spec, name))
    _check_objective(objective, n_y, L.k, spec)
    if isinstance(objective, Linear) and objective.c.size < n_y:
        objective = Linear(np.concatenate([objective.c, np.zeros(n_y - objective.c.size)]), objective.offset)
    return MomentProblem(spec, L.k, L.l, A_eq, b_eq, blocks, objective)


def _check_objective(objective, n_y: int, k: int, spec: BasisSpec):
    kx = basis_size(spec.dimension, k)
    if isinstance(objective, Linear):
        if objective.c.size > n_y:
            raise DimensionMismatch("objective longer than the moment vector")
        if np.any(objective.c[kx:] != 0):
            raise DimensionMismatch("linear objective uses moments above degree k")
    elif isinstance(objective, MomentFit):
        if np.any(objective.indices >= kx) or np.any(objective.indices < 0):
            raise DimensionMismatch("moment-fit index above degree k")
    else:
        raise TypeError(f"unsupported objective {type(objective).__name__}")


def lift_momentfit(problem: MomentProblem) -> MomentProblem:
    """Replace ``sum w (y_I - t)^2`` by ``min s`` with ``|sqrt(w) (y_I - t)| <= s``.

    The lifted optimum equals the square root of the original one.
    """
    fit = problem.objective
    if not isinstance(fit, MomentFit):
        raise TypeError("lift_momentfit needs a MomentFit objective")
    nv = problem.n_var + 1
    t = nv - 1
    A_eq = sp.hstack([problem.A_eq, sp.csr_matrix((problem.A_eq.shape[0], 1))]).tocsr()
    sw = np.sqrt(fit.weights)
    r = len(fit.indices)
    rows = sp.csr_matrix((sw, (np.arange(r), fit.indices)), shape=(r, nv))
    c = np.zeros(nv)
    c[t] = 1.0
    return MomentProblem(problem.spec, problem.k, problem.l, A_eq, problem.b_eq, problem.blocks, Linear(c),
                         [SOCBlock(rows, sw * fit.targets, t)], nv, fit)


def chebyshev_index(alpha, spec: BasisSpec) -> int:
    """Position of ``alpha`` in the dictionary (convenience for objectives)."""
    return spec.index_of(alpha)
