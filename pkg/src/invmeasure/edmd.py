"""Approximate Koopman and Lie-derivative matrices from snapshot data.

The degree-``k`` dictionary is the prefix of the degree-``l`` one, so
``Theta`` (the matrix selecting it) is a shifted identity. A ``LieMatrix``
row ``r`` holds the coefficients, in the degree-``l`` dictionary, of the
(approximate) Lie derivative of basis function ``r``.
"""

from __future__ import annotations

import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import PolynomialSystem, SnapshotSet, _as_system
from .errors import DegreeOrder, DegreeOverflow, DimensionMismatch
from .polybasis import (
    BasisSpec,
    InterpolationGrid,
    OutsideBoxWarning,
    basis_size,
    eval_basis,
    eval_basis_derivatives,
)

DATA = "data"
EXACT_MAP = "exact_map"
EXACT_ODE = "exact_ode"
EXACT_SDE = "exact_sde"
KINDS = (DATA, EXACT_MAP, EXACT_ODE, EXACT_SDE)


def theta_matrix(k: int, l: int, n: int) -> np.ndarray:
    if k > l:
        raise DegreeOrder(f"need k <= l, got k={k}, l={l}")
    return np.eye(basis_size(n, k), basis_size(n, l))


@dataclass
class LieMatrix:
    """Lie-derivative matrix together with its dictionaries.

    Attributes
    ----------
    entries : ndarray, shape (k_x, l_x)
    k, l : int
    spec : BasisSpec
        Degree-``l`` dictionary (family, dimension, box).
    tau : float
    kind : str
        One of ``KINDS``.
    report : dict
        Diagnostics (numerical rank, thresholding rounds and zeroed fraction).
    """

    entries: np.ndarray
    k: int
    l: int
    spec: BasisSpec
    tau: float = 1.0
    kind: str = DATA
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        self.spec = self.spec.with_degree(self.l)
        shape = (basis_size(self.spec.dimension, self.k), self.spec.size)
        self.entries = np.asarray(self.entries, dtype=float)
        if self.entries.shape != shape:
            raise DimensionMismatch(f"entries have shape {self.entries.shape}, expected {shape}")

    @property
    def shape(self):
        return self.entries.shape

    def koopman(self) -> np.ndarray:
        """``K = Theta + tau * L``."""
        return theta_matrix(self.k, self.l, self.spec.dimension) + self.tau * self.entries

    def nnz(self, tol: float = 0.0) -> int:
        return int(np.count_nonzero(np.abs(self.entries) > tol))

    def header(self) -> dict:
        return {"kind": self.kind, "k": self.k, "l": self.l, "spec": self.spec.to_dict(), "tau": self.tau,
                "report": self.report}

    def save(self, path) -> Path:
        """One JSON header line, then the rows as comma-separated values."""
        path = Path(path)
        buf = io.StringIO()
        np.savetxt(buf, self.entries, fmt="%.17g", delimiter=",")
        path.write_text("# " + json.dumps(self.header(), sort_keys=True) + "\n" + buf.getvalue())
        return path

    @classmethod
    def load(cls, path) -> "LieMatrix":
        path = Path(path)
        with open(path) as fh:
            head = json.loads(fh.readline()[2:])
        entries = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        return cls(entries, head["k"], head["l"], BasisSpec.from_dict(head["spec"]), head["tau"], head["kind"],
                   head.get("report", {}))


# ---------------------------------------------------------------------------
# data matrices


def _eval(spec: BasisSpec, pts: np.ndarray) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutsideBoxWarning)
        return eval_basis(spec, pts).reshape(len(pts), -1)


def _points(snapshots) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(snapshots, SnapshotSet):
        return snapshots.x, snapshots.z
    x, z = snapshots
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    return x.reshape(len(x), -1), z.reshape(len(z), -1)


def build_data_matrices(snapshots, k: int, l: int, spec: BasisSpec) -> tuple[np.ndarray, np.ndarray]:
    """Dictionary evaluations ``P`` (degree ``l`` at ``x_i``) and ``Q`` (degree ``k`` at ``z_i``).

    Returns
    -------
    P : ndarray, shape (l_x, m)
    Q : ndarray, shape (k_x, m)
    """
    if k > l:
        raise DegreeOrder(f"need k <= l, got k={k}, l={l}")
    x, z = _points(snapshots)
    if x.shape[1] != spec.dimension:
        raise DimensionMismatch(f"data dimension {x.shape[1]} != dictionary dimension {spec.dimension}")
    P = _eval(spec.with_degree(l), x).T
    Q = _eval(spec.with_degree(k), z).T
    return P, Q


def _pinv_apply(R: np.ndarray, C: np.ndarray, rank_tol: float):
    """Minimum-norm solution of ``R X = C`` with singular values below ``rank_tol * s_max`` dropped."""
    U, s, Vt = np.linalg.svd(R, full_matrices=False)
    keep = s > rank_tol * s[0] if s.size and s[0] > 0 else np.zeros_like(s, dtype=bool)
    X = Vt[keep].T @ ((U[:, keep].T @ C) / s[keep, None])
    return X, int(keep.sum()), s


def koopman_matrix(P: np.ndarray, Q: np.ndarray, rank_tol: float = 1e-10) -> np.ndarray:
    """``K = Q P^+`` with the pseudoinverse taken from a truncated SVD of ``P``."""
    K, _, _ = _pinv_apply(P.T, Q.T, rank_tol)
    return K.T


@dataclass
class LSFactor:
    """Triangular summary of the least-squares problem ``min |Q - K P|_F``.

    ``R`` is the triangular factor of ``P^T`` and ``C = U^T Q^T`` for the
    orthogonal factor ``U``, so ``|Q - K P|_F^2 = |C - R K^T|_F^2 + rest``.
    """

    R: np.ndarray
    C: np.ndarray
    rest: float
    m: int

    def residual(self, K: np.ndarray) -> float:
        """Frobenius norm of ``Q - K P``."""
        return float(np.sqrt(np.sum((self.C - self.R @ K.T) ** 2) + self.rest))

    def solve(self, rank_tol: float = 1e-10):
        X, rank, s = _pinv_apply(self.R, self.C, rank_tol)
        return X.T, rank, s


def factorize(snapshots, k: int, l: int, spec: BasisSpec, block: int = 100_000) -> LSFactor:
    """Blockwise QR of ``[P^T | Q^T]`` so memory stays bounded for large ``m``."""
    x, z = _points(snapshots)
    lx = basis_size(spec.dimension, l)
    kx = basis_size(spec.dimension, k)
    Raug = np.zeros((0, lx + kx))
    for start in range(0, len(x), block):
        P, Q = build_data_matrices((x[start : start + block], z[start : start + block]), k, l, spec)
        stacked = np.vstack([Raug, np.hstack([P.T, Q.T])])
        Raug = np.linalg.qr(stacked, mode="r")
    # pad when fewer rows than columns
    if Raug.shape[0] < lx + kx:
        Raug = np.vstack([Raug, np.zeros((lx + kx - Raug.shape[0], lx + kx))])
    R = Raug[:lx, :lx]
    C = Raug[:lx, lx:]
    rest = float(np.sum(Raug[lx:, lx:] ** 2))
    return LSFactor(R, C, rest, len(x))


def gram_factor(snapshots, k: int, l: int, spec: BasisSpec, chunk: int = 2048) -> LSFactor:
    """``LSFactor`` from the Gram products ``P P^T`` and ``P Q^T``, accumulated in chunks.

    With ``P P^T = V diag(lam) V^T`` the factor is ``R = diag(sqrt(lam)) V^T``
    and ``C = diag(lam^-1/2) V^T P Q^T``, so ``R^T R = P P^T`` and
    ``R^T C = P Q^T``. Singular values of ``R`` are those of ``P`` down to
    roughly ``1e-8`` of the largest; smaller ones are lost to the squaring.
    """
    x, z = _points(snapshots)
    lx = basis_size(spec.dimension, l)
    kx = basis_size(spec.dimension, k)
    spec_l, spec_k = spec.with_degree(l), spec.with_degree(k)
    G = np.zeros((lx, lx))
    H = np.zeros((lx, kx))
    qq = 0.0
    for start in range(0, len(x), chunk):
        Pt = _eval(spec_l, x[start : start + chunk])
        Qt = _eval(spec_k, z[start : start + chunk])
        G += Pt.T @ Pt
        H += Pt.T @ Qt
        qq += float(np.einsum("ij,ij->", Qt, Qt))
    lam, V = np.linalg.eigh(G)
    lam = np.clip(lam, 0.0, None)[::-1]
    V = V[:, ::-1]
    root = np.sqrt(lam)
    pos = root > 0
    R = root[:, None] * V.T
    C = np.zeros((lx, kx))
    C[pos] = (V[:, pos].T @ H) / root[pos, None]
    return LSFactor(R, C, max(qq - float(np.sum(C**2)), 0.0), len(x))


def lie_matrix(K: np.ndarray, k: int, l: int, tau: float, spec: BasisSpec, kind: str = DATA,
               report: dict | None = None) -> LieMatrix:
    """``L = (K - Theta) / tau``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    L = (K - theta_matrix(k, l, spec.dimension)) / tau
    return LieMatrix(L, k, l, spec, float(tau), kind, dict(report or {}))


def edmd_lie_matrix(snapshots: SnapshotSet, k: int, l: int, spec: BasisSpec, rank_tol: float = 1e-10,
                    method: str = "auto", block: int = 100_000, threshold: bool = False,
                    rel_cut: float = 1e-3, max_rounds: int = 20) -> LieMatrix:
    """Data-driven Lie matrix from snapshots.

    Parameters
    ----------
    method : {"auto", "direct", "qr", "gram"}
        ``direct`` forms ``P`` and ``Q`` whole and applies the SVD
        pseudoinverse; ``qr`` accumulates a blockwise QR factor; ``gram``
        accumulates ``P P^T`` and ``P Q^T``. ``auto`` picks ``direct`` for
        ``m <= block`` and ``gram`` otherwise.
    threshold : bool
        Apply ``threshold_refine`` afterwards.
    """
    spec = spec.with_degree(l)
    m = len(snapshots)
    if method == "auto":
        method = "direct" if m <= block else "gram"
    if method == "direct" and not threshold:
        P, Q = build_data_matrices(snapshots, k, l, spec)
        K = koopman_matrix(P, Q, rank_tol)
        rank = int(np.linalg.matrix_rank(P, tol=rank_tol * np.linalg.norm(P, 2))) if P.size else 0
        report = {"method": "direct", "rank": rank, "m": m}
        fac = None
    else:
        if method == "gram":
            fac = gram_factor(snapshots, k, l, spec)
        else:
            method = "qr"
            fac = factorize(snapshots, k, l, spec, block)
        K, rank, _ = fac.solve(rank_tol)
        report = {"method": method, "rank": rank, "m": m}
    L = lie_matrix(K, k, l, snapshots.tau, spec, DATA, report)
    if threshold:
        L = threshold_refine(L, fac, rel_cut=rel_cut, max_rounds=max_rounds, rank_tol=rank_tol)
    return L


def threshold_refine(L: LieMatrix, data, tau: float | None = None, rel_cut: float = 1e-3, max_rounds: int = 20,
                     rank_tol: float = 1e-10) -> LieMatrix:
    """Iterative hard thresholding of each row followed by a least-squares refit.

    In every round and for every row, entries smaller than ``rel_cut`` times
    the largest magnitude in that row are set to zero (so the corresponding
    Koopman entries equal ``Theta``), and the surviving entries are refitted.
    Rounds stop once the sparsity pattern repeats.

    Parameters
    ----------
    L : LieMatrix
    data : LSFactor or (P, Q)
    tau : float, optional
        Defaults to ``L.tau``.
    """
    if not 0 < rel_cut < 1:
        raise ValueError("rel_cut must lie in (0, 1)")
    tau = L.tau if tau is None else tau
    fac = data if isinstance(data, LSFactor) else _factor_from_pq(*data)
    theta = theta_matrix(L.k, L.l, L.spec.dimension)
    Lw = L.entries.copy()
    scale = max(np.max(np.abs(Lw)), 1e-300)
    pattern = None
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        keep = np.zeros_like(Lw, dtype=bool)
        for r in range(Lw.shape[0]):
            big = np.max(np.abs(Lw[r]))
            if big > 1e-12 * scale:
                keep[r] = np.abs(Lw[r]) >= rel_cut * big
        if pattern is not None and np.array_equal(keep, pattern):
            rounds -= 1
            break
        pattern = keep
        Lnew = np.zeros_like(Lw)
        for r in range(Lw.shape[0]):
            S = np.nonzero(keep[r])[0]
            if S.size == 0:
                continue
            # fixed part K_r = Theta_r outside S
            fixed = theta[r].copy()
            fixed[S] = 0.0
            rhs = fac.C[:, r] - fac.R @ fixed
            sol, _, _ = _pinv_apply(fac.R[:, S], rhs[:, None], rank_tol)
            Lnew[r, S] = (sol[:, 0] - theta[r, S]) / tau
        Lw = Lnew
    report = dict(L.report)
    report.update({"threshold_rounds": rounds, "zeroed_fraction": float(np.mean(Lw == 0.0)),
                   "rel_cut": rel_cut})
    return LieMatrix(Lw, L.k, L.l, L.spec, tau, L.kind, report)


def _factor_from_pq(P: np.ndarray, Q: np.ndarray) -> LSFactor:
    lx, kx = P.shape[0], Q.shape[0]
    Raug = np.linalg.qr(np.hstack([P.T, Q.T]), mode="r")
    if Raug.shape[0] < lx + kx:
        Raug = np.vstack([Raug, np.zeros((lx + kx - Raug.shape[0], lx + kx))])
    return LSFactor(Raug[:lx, :lx], Raug[:lx, lx:], float(np.sum(Raug[lx:, lx:] ** 2)), P.shape[1])


# ---------------------------------------------------------------------------
# exact generators for known polynomial dynamics


def exact_lie_matrix(system, k: int, l: int, spec: BasisSpec, kind: str | None = None,
                     chunk: int = 2048) -> LieMatrix:
    """Lie matrix of a known polynomial map, ODE or SDE.

    Maps give ``b o f - b``, ODEs ``f . grad b`` and SDEs with additive noise
    ``sigma`` give ``a . grad b + sigma^2 / 2 * laplacian b``. Values at a
    tensor Chebyshev grid are transformed to exact dictionary coefficients.

    Raises
    ------
    DegreeOverflow
        If some image has degree above ``l``.
    """
    if k > l:
        raise DegreeOrder(f"need k <= l, got k={k}, l={l}")
    system = _as_system(system, kind or "map", spec.box)
    kind = kind or system.kind
    n = spec.dimension
    if system.dimension != n:
        raise DimensionMismatch(f"system dimension {system.dimension} != dictionary dimension {n}")
    dmax = max(p.degree for p in system.field)
    need = k * dmax if kind == "map" else k + dmax - 1
    if kind == "sde" and system.sigma != 0:
        need = max(need, k - 2)
    if need > l:
        raise DegreeOverflow(f"images reach degree {need} > l={l}")
    spec_k = spec.with_degree(k)
    spec_l = spec.with_degree(l)
    grid = InterpolationGrid(spec_l)
    nodes = grid.nodes
    vals = np.empty((nodes.shape[0], spec_k.size))
    for s in range(0, nodes.shape[0], chunk):
        pts = nodes[s : s + chunk]
        fx = np.stack([p(pts) for p in system.field], axis=1)
        if kind == "map":
            vals[s : s + chunk] = _eval(spec_k, fx) - _eval(spec_k, pts)
        else:
            _, grad, hess = eval_basis_derivatives(spec_k, pts)
            v = np.einsum("mrd,md->mr", grad, fx)
            if kind == "sde":
                v += 0.5 * system.sigma ** 2 * np.einsum("mrdd->mr", hess)
            vals[s : s + chunk] = v
    A = grid.coefficients(vals).T
    A[0] = 0.0
    # transform round-off: entries that are zero in exact arithmetic
    A[np.abs(A) < 1e-13 * max(np.max(np.abs(A)), 1.0)] = 0.0
    tag = {"map": EXACT_MAP, "ode": EXACT_ODE, "sde": EXACT_SDE}[kind]
    return LieMatrix(A, k, l, spec_l, 1.0, tag, {"system": system.name})


__all__ = [
    "LieMatrix",
    "LSFactor",
    "gram_factor",
    "build_data_matrices",
    "edmd_lie_matrix",
    "exact_lie_matrix",
    "factorize",
    "koopman_matrix",
    "lie_matrix",
    "theta_matrix",
    "threshold_refine",
    "DATA",
    "EXACT_MAP",
    "EXACT_ODE",
    "EXACT_SDE",
]
