"""Operator-splitting solver for conic programs.

Standard form::

    minimize  c.u   subject to  A u + s = b,  s in K

with ``K`` a product of a zero cone, a nonnegative orthant, second-order
cones and PSD cones. PSD blocks are vectorized with ``svec``: the upper
triangle row by row with off-diagonal entries multiplied by sqrt(2), so
Euclidean and trace inner products agree.

The iteration is ADMM on ``z = A u`` constrained to ``b - K`` (an OSQP-style
splitting with a linear cost), with a cached Cholesky factor of
``sigma I + A^T R A``, over-relaxation, per-row penalties and diagonal
equilibration.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import CenteringFailed, DimensionMismatch, MaxIterExceeded, NumericalBreakdown
from .momentsdp import Linear, MomentFit, MomentProblem, lift_momentfit
from .polybasis import lebesgue_moments

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE_LIKE = "infeasible_like"

SQRT2 = np.sqrt(2.0)

# ---------------------------------------------------------------------------
# symmetric-matrix vectorization and cone projections


def svec(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    iu, ju = np.triu_indices(M.shape[0])
    return np.where(iu == ju, 1.0, SQRT2) * M[iu, ju]


def smat(v: np.ndarray, size: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if size is None:
        size = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    iu, ju = np.triu_indices(size)
    vals = np.where(iu == ju, v, v / SQRT2)
    M = np.zeros((size, size))
    M[iu, ju] = vals
    M[ju, iu] = vals
    return M


def psd_project(M: np.ndarray) -> np.ndarray:
    """Nearest positive semidefinite matrix in the Frobenius norm."""
    M = np.asarray(M, dtype=float)
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if w[0] >= 0:
        return M.copy()
    w = np.maximum(w, 0.0)
    return (V * w) @ V.T


def soc_project(v: np.ndarray) -> np.ndarray:
    t, x = v[0], v[1:]
    nx = np.linalg.norm(x)
    if nx <= t:
        return v.copy()
    if nx <= -t:
        return np.zeros_like(v)
    a = 0.5 * (t + nx)
    return np.concatenate([[a], a * x / nx])


@dataclass
class Cones:
    """Cone sizes in row order: zero, nonnegative, each SOC, each PSD (matrix order)."""

    zero: int = 0
    nonneg: int = 0
    soc: list = field(default_factory=list)
    psd: list = field(default_factory=list)

    @property
    def rows(self) -> int:
        return self.zero + self.nonneg + sum(self.soc) + sum(s * (s + 1) // 2 for s in self.psd)

    def slices(self):
        """``(kind, slice, size)`` for every cone block in order."""
        out = []
        i = 0
        for kind, n in (("zero", self.zero), ("nonneg", self.nonneg)):
            if n:
                out.append((kind, slice(i, i + n), n))
                i += n
        for n in self.soc:
            out.append(("soc", slice(i, i + n), n))
            i += n
        for s in self.psd:
            d = s * (s + 1) // 2
            out.append(("psd", slice(i, i + d), s))
            i += d
        return out


class _ConeProjector:
    def __init__(self, cones: Cones):
        self.blocks = cones.slices()
        self._tri = {s: np.triu_indices(s) for k, _, s in self.blocks if k == "psd"}

    def __call__(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        for kind, sl, n in self.blocks:
            seg = v[sl]
            if kind == "zero":
                out[sl] = 0.0
            elif kind == "nonneg":
                out[sl] = np.maximum(seg, 0.0)
            elif kind == "soc":
                out[sl] = soc_project(seg)
            else:
                iu, ju = self._tri[n]
                off = iu != ju
                vals = seg.copy()
                vals[off] /= SQRT2
                M = np.empty((n, n))
                M[iu, ju] = vals
                M[ju, iu] = vals
                w, V = np.linalg.eigh(M)
                if w[0] >= 0:
                    out[sl] = seg
                    continue
                P = (V * np.maximum(w, 0.0)) @ V.T
                r = P[iu, ju]
                r[off] *= SQRT2
                out[sl] = r
        return out

    def min_eigs(self, v: np.ndarray) -> list[float]:
        out = []
        for kind, sl, n in self.blocks:
            if kind == "psd":
                out.append(float(np.linalg.eigvalsh(smat(v[sl], n))[0]))
            elif kind == "nonneg" and n:
                out.append(float(np.min(v[sl])))
        return out


# ---------------------------------------------------------------------------
# standard form


@dataclass
class ConicStandardForm:
    """``min c.u + offset`` s.t. ``A u + s = b``, ``s`` in ``cones``.

    ``blocks`` names each cone block (used to map slacks back to problem
    constraints); ``n_moments`` is the length of the moment vector inside ``u``.
    """

    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    cones: Cones
    offset: float = 0.0
    blocks: list = field(default_factory=list)
    n_moments: int = 0
    lower_bound: float | None = None

    def __post_init__(self):
        self.A = sp.csr_matrix(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if self.A.shape != (self.b.size, self.c.size):
            raise DimensionMismatch(f"A is {self.A.shape}, b has {self.b.size}, c has {self.c.size}")
        if self.cones.rows != self.b.size:
            raise DimensionMismatch(f"cones cover {self.cones.rows} rows, A has {self.b.size}")

    def to_dict(self) -> dict:
        coo = self.A.tocoo()
        return {"A": {"shape": list(coo.shape), "triplets": [coo.row.tolist(), coo.col.tolist(), coo.data.tolist()]},
                "b": self.b.tolist(), "c": self.c.tolist(), "cones": asdict(self.cones), "offset": self.offset,
                "blocks": self.blocks, "n_moments": self.n_moments, "lower_bound": self.lower_bound}

    @classmethod
    def from_dict(cls, d: dict) -> "ConicStandardForm":
        r, c, v = d["A"]["triplets"]
        A = sp.csr_matrix((v, (r, c)), shape=tuple(d["A"]["shape"]))
        return cls(A, np.array(d["b"]), np.array(d["c"]), Cones(**d["cones"]), d["offset"], d["blocks"],
                   d["n_moments"], d.get("lower_bound"))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict()))
        return path

    @classmethod
    def load(cls, path) -> "ConicStandardForm":
        return cls.from_dict(json.loads(Path(path).read_text()))


def to_standard_form(problem: MomentProblem) -> ConicStandardForm:
    """Conic standard form of a moment problem (quadratic fits are lifted first)."""
    if isinstance(problem.objective, MomentFit):
        problem = lift_momentfit(problem)
    nv = problem.n_var
    ny = problem.y_size
    if problem.A_eq.shape[1] != nv:
        raise DimensionMismatch("equality block does not match the variable count")

    def pad(M):
        M = sp.csr_matrix(M)
        return M if M.shape[1] == nv else sp.hstack([M, sp.csr_matrix((M.shape[0], nv - M.shape[1]))]).tocsr()

    rows = [problem.A_eq]
    rhs = [problem.b_eq]
    names = [("equality", "zero")]
    cones = Cones(zero=problem.A_eq.shape[0])
    scalars = [b for b in problem.blocks if b.size == 1]
    mats = [b for b in problem.blocks if b.size > 1]
    if scalars:
        rows.append(-pad(sp.vstack([b.rows for b in scalars])))
        rhs.append(np.zeros(len(scalars)))
        cones.nonneg = len(scalars)
        names.append(([b.name for b in scalars], "nonneg"))
    for s in problem.soc:
        head = sp.csr_matrix(([-1.0], ([0], [s.t_index])), shape=(1, nv))
        rows.append(sp.vstack([head, -pad(s.rows)]))
        rhs.append(np.concatenate([[0.0], -s.offset]))
        cones.soc.append(1 + s.rows.shape[0])
        names.append(("fit", "soc"))
    for b in mats:
        rows.append(-pad(b.svec_matrix()))
        rhs.append(np.zeros(b.size * (b.size + 1) // 2))
        cones.psd.append(b.size)
        names.append((b.name, "psd"))
    obj = problem.objective
    c = np.zeros(nv)
    c[: obj.c.size] = obj.c
    A = sp.vstack(rows).tocsr()
    # a lifted fit minimizes a norm, so zero bounds the optimal value
    bound = 0.0 if problem.soc else None
    return ConicStandardForm(A, np.concatenate(rhs), c, cones, obj.offset, names, ny, bound)


# ---------------------------------------------------------------------------
# ADMM


@dataclass
class SolverSettings:
    """Tolerances and algorithm parameters.

    ``eps_abs``/``eps_rel`` default to 1e-8 for one-dimensional dictionaries
    and 1e-7 otherwise when left as ``None``.
    """

    eps_abs: float | None = None
    eps_rel: float | None = None
    max_iter: int = 500_000
    alpha: float = 1.5
    sigma: float = 1e-6
    rho: float = 0.1
    rho_eq_scale: float = 1e3
    adaptive_rho: bool = True
    adapt_interval: int = 200
    adapt_factor: float = 5.0
    scaling_iters: int = 25
    check_every: int = 10
    time_limit: float | None = None
    strict: bool = False
    seed: int | None = None
    center: bool = True
    anderson_memory: int = 10
    anderson_safeguard: float = 1.0

    def resolved(self, dimension: int) -> "SolverSettings":
        default = 1e-8 if dimension == 1 else 1e-7
        out = SolverSettings(**asdict(self))
        out.eps_abs = default if self.eps_abs is None else self.eps_abs
        out.eps_rel = default if self.eps_rel is None else self.eps_rel
        return out


@dataclass
class SolveReport:
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float
    objective: float
    wall_time: float
    rho: float = 0.0
    rho_updates: int = 0
    relative_primal: float = 0.0
    min_slack_eig: float = 0.0
    centered: bool = False
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def record(self) -> str:
        """One ``key=value`` line per field."""
        return "\n".join(f"{k}={v}" for k, v in self.to_dict().items())


class _Anderson:
    """Type-II Anderson extrapolation of a fixed-point iteration with a safeguard.

    ``update`` returns the next point to evaluate; ``accept`` checks the
    residual produced by the previous extrapolated point against the last
    plain residual and signals a restart from ``fallback`` when it grew.
    """

    def __init__(self, memory: int, safeguard: float = 1.0, reg: float = 1e-10):
        self.memory = memory
        self.safeguard = safeguard
        self.reg = reg
        self.reset()

    def reset(self):
        self.dG: list = []
        self.dF: list = []
        self.prev = None
        self.pending = False
        self.ref = np.inf
        self.fallback = None

    def accept(self, g: np.ndarray) -> bool:
        if not self.pending:
            return True
        ok = np.linalg.norm(g) <= self.safeguard * self.ref
        if not ok:
            self.reset_keep_fallback()
        return ok

    def reset_keep_fallback(self):
        fb = self.fallback
        self.reset()
        self.fallback = fb

    def update(self, w: np.ndarray, fw: np.ndarray, g: np.ndarray) -> np.ndarray:
        if self.prev is not None:
            pg, pf = self.prev
            self.dG.append(g - pg)
            self.dF.append(fw - pf)
            if len(self.dG) > self.memory:
                self.dG.pop(0)
                self.dF.pop(0)
        self.prev = (g, fw)
        self.ref = float(np.linalg.norm(g))
        self.fallback = fw
        if not self.dG:
            self.pending = False
            return fw
        G = np.stack(self.dG, axis=1)
        F = np.stack(self.dF, axis=1)
        H = G.T @ G
        H += self.reg * (np.trace(H) / H.shape[0] + 1e-30) * np.eye(H.shape[0])
        try:
            gamma = np.linalg.solve(H, G.T @ g)
        except np.linalg.LinAlgError:
            self.reset_keep_fallback()
            return fw
        cand = fw - F @ gamma
        if not np.all(np.isfinite(cand)):
            self.reset_keep_fallback()
            return fw
        self.pending = True
        return cand


def _equilibrate(A: sp.csr_matrix, c: np.ndarray, cones: Cones, iters: int):
    m, n = A.shape
    D = np.ones(n)
    E = np.ones(m)
    blocks = [(sl, k) for k, sl, _ in cones.slices() if k in ("soc", "psd")]
    As = A.copy()
    for _ in range(iters):
        if m == 0 or n == 0:
            break
        absA = abs(As)
        col = np.asarray(absA.max(axis=0).todense()).ravel()
        row = np.asarray(absA.max(axis=1).todense()).ravel()
        col = np.clip(col, 1e-4, 1e4)
        row = np.clip(row, 1e-4, 1e4)
        dr = 1.0 / np.sqrt(row)
        for sl, _ in blocks:
            # one factor per cone block keeps the cone invariant
            dr[sl] = 1.0 / np.sqrt(np.max(row[sl]))
        dc = 1.0 / np.sqrt(col)
        D *= dc
        E *= dr
        As = sp.diags(dr) @ As @ sp.diags(dc)
    qs = D * c
    cs = 1.0 / max(np.max(np.abs(qs), initial=0.0), 1e-6) if np.any(qs) else 1.0
    cs = min(cs, 1e4)
    return sp.csr_matrix(As), D, E, cs


def solve(form: ConicStandardForm, settings: SolverSettings | None = None, dimension: int = 2,
          warm: tuple | None = None, return_dual: bool = False):
    """ADMM for ``form``.

    Parameters
    ----------
    form : ConicStandardForm
    settings : SolverSettings, optional
    dimension : int
        State dimension of the underlying problem (selects default tolerances).
    warm : (u, y), optional
        Starting primal and dual iterates in unscaled variables.
    return_dual : bool
        Also return the dual vector ``y`` (with ``-y`` in the dual cone).

    Returns
    -------
    u : ndarray
    report : SolveReport
    dual : ndarray, only when ``return_dual``

    Raises
    ------
    NumericalBreakdown
        On non-finite iterates or a failed factorization.
    MaxIterExceeded
        Only with ``settings.strict``; otherwise the report says ``max_iter``.
    """
    st = (settings or SolverSettings()).resolved(dimension)
    t0 = time.perf_counter()
    A, b, c, cones = form.A, form.b, form.c, form.cones
    m, n = A.shape
    As, D, E, cs = _equilibrate(A, c, cones, st.scaling_iters)
    bs = E * b
    qs = cs * D * c
    proj = _ConeProjector(cones)
    zero_rows = np.zeros(m, dtype=bool)
    if cones.zero:
        zero_rows[: cones.zero] = True
    Az = As[zero_rows]
    Ao = As[~zero_rows]
    Gz = (Az.T @ Az).toarray()
    Go = (Ao.T @ Ao).toarray()

    rho = st.rho
    rvec = np.where(zero_rows, rho * st.rho_eq_scale, rho)

    def factor(rho):
        K = st.sigma * np.eye(n) + rho * Go + rho * st.rho_eq_scale * Gz
        try:
            return sla.cho_factor(K, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericalBreakdown(f"factorization failed: {exc}") from exc

    chol = factor(rho)
    x = np.zeros(n)
    z = np.zeros(m)
    y = np.zeros(m)
    if st.seed is not None:
        x = 1e-3 * np.random.default_rng(st.seed).standard_normal(n)
    if warm is not None:
        u0, y0 = warm
        x = np.asarray(u0, dtype=float) / D
        y = cs * np.asarray(y0, dtype=float) / E
    z = bs - proj(bs - As @ x)

    def project_c(v):
        return bs - proj(bs - v)

    status = MAX_ITER
    it = 0
    rho_updates = 0
    res = (np.inf, np.inf, np.inf)
    best = None
    Dinv_c = 1.0 / cs
    nx, nz = n, m

    def admm_step(x, z, y):
        rhs = st.sigma * x - qs + As.T @ (rvec * z - y)
        xt = sla.cho_solve(chol, rhs)
        zt = As @ xt
        xn = st.alpha * xt + (1 - st.alpha) * x
        zr = st.alpha * zt + (1 - st.alpha) * z
        zn = project_c(zr + y / rvec)
        yn = y + rvec * (zr - zn)
        return xn, zn, yn

    aa = _Anderson(st.anderson_memory, st.anderson_safeguard) if st.anderson_memory > 0 else None
    w = np.concatenate([x, z, y])
    for it in range(1, st.max_iter + 1):
        fx, fz, fy = admm_step(w[:nx], w[nx:nx + nz], w[nx + nz:])
        fw = np.concatenate([fx, fz, fy])
        if aa is not None:
            g = w - fw
            if not aa.accept(g):
                # the extrapolated point made things worse: restart from the last plain iterate
                w = aa.fallback
                fx, fz, fy = admm_step(w[:nx], w[nx:nx + nz], w[nx + nz:])
                fw = np.concatenate([fx, fz, fy])
                g = w - fw
            w = aa.update(w, fw, g)
        else:
            w = fw
        x, z, y = fx, fz, fy
        if it % st.check_every and it != st.max_iter:
            continue
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise NumericalBreakdown(f"non-finite iterate at iteration {it}")
        xu = D * x
        zu = z / E
        yu = E * y * Dinv_c
        Ax = A @ xu
        Aty = A.T @ yu
        rp = np.max(np.abs(Ax - zu), initial=0.0)
        rd = np.max(np.abs(c + Aty), initial=0.0)
        pobj = float(c @ xu)
        dobj = float(-b @ yu)
        gap = abs(pobj - dobj)
        ep = st.eps_abs + st.eps_rel * max(np.max(np.abs(Ax), initial=0.0), np.max(np.abs(zu), initial=0.0))
        ed = st.eps_abs + st.eps_rel * max(np.max(np.abs(Aty), initial=0.0), np.max(np.abs(c), initial=0.0))
        eg = st.eps_abs + st.eps_rel * max(abs(pobj), abs(dobj), 1.0)
        res = (rp, rd, gap)
        score = max(rp / ep, rd / ed, gap / eg)
        if it % 1000 == 0:
            log.debug("it=%d rp=%.2e rd=%.2e gap=%.2e obj=%.8g rho=%.3g", it, rp, rd, gap, pobj, rho)
        if best is None or score < best[0]:
            best = (score, xu.copy(), yu.copy(), res)
        if rp < ep and rd < ed and gap < eg:
            status = OPTIMAL
            break
        if rp < ep and form.lower_bound is not None and pobj - form.lower_bound < eg:
            # primal feasible and the objective sits on a known lower bound
            status = OPTIMAL
            break
        if st.time_limit is not None and time.perf_counter() - t0 > st.time_limit:
            break
        if st.adaptive_rho and it % st.adapt_interval == 0:
            # balance scaled primal and dual residuals
            sp_ = np.max(np.abs(As @ x - z)) / max(np.max(np.abs(As @ x)), np.max(np.abs(z)), 1e-30)
            sd_ = np.max(np.abs(qs + As.T @ y)) / max(np.max(np.abs(As.T @ y)), np.max(np.abs(qs)), 1e-30)
            new = float(np.clip(rho * np.sqrt(sp_ / max(sd_, 1e-30)), 1e-6, 1e6))
            if new > rho * st.adapt_factor or new < rho / st.adapt_factor:
                rho = new
                rvec = np.where(zero_rows, rho * st.rho_eq_scale, rho)
                chol = factor(rho)
                rho_updates += 1
                if aa is not None:
                    aa.reset()
                    w = np.concatenate([x, z, y])
    if status == OPTIMAL:
        xu = D * x
        yu = E * y * Dinv_c
    else:
        _, xu, yu, res = best
        if res[0] > 1e-2 * (1.0 + np.max(np.abs(b), initial=0.0)):
            status = INFEASIBLE_LIKE
    s = b - A @ xu
    eigs = proj.min_eigs(s)
    report = SolveReport(
        status=status,
        iterations=it,
        primal_residual=float(res[0]),
        dual_residual=float(res[1]),
        gap=float(res[2]),
        objective=float(c @ xu + form.offset),
        wall_time=time.perf_counter() - t0,
        rho=rho,
        rho_updates=rho_updates,
        relative_primal=float(np.linalg.norm(A @ xu + _cone_slack(s, proj) - b) / (1 + np.linalg.norm(b))),
        min_slack_eig=min(eigs) if eigs else 0.0,
    )
    if status != OPTIMAL and st.strict:
        raise MaxIterExceeded(f"stopped after {it} iterations: {report.record()}")
    if return_dual:
        return xu, report, yu
    return xu, report


def _cone_slack(s: np.ndarray, proj: _ConeProjector) -> np.ndarray:
    return proj(s)


# ---------------------------------------------------------------------------
# analytic centre of the optimal face for moment fits


def _block_data(problem: MomentProblem):
    out = []
    for blk in problem.blocks:
        G = blk.rows.toarray()
        w = np.where(blk.iu == blk.ju, 1.0, 2.0)
        out.append((blk, G, w))
    return out


def _barrier(blocks, y, need_hessian=True):
    """Value, gradient and Hessian of ``-sum log det M_j(y)``; ``None`` if some block is not PD.

    With ``need_hessian=False`` the third entry is ``None``.
    """
    N = y.size
    val = 0.0
    g = np.zeros(N)
    H = np.zeros((N, N)) if need_hessian else None
    for blk, G, w in blocks:
        M = blk(y)
        try:
            C = np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            return None
        val -= 2.0 * np.sum(np.log(np.diag(C)))
        Ci = sla.solve_triangular(C, np.eye(blk.size), lower=True)
        Minv = Ci.T @ Ci
        g -= G.T @ (w * Minv[blk.iu, blk.ju])
        if not need_hessian:
            continue
        cols = np.nonzero(np.any(G != 0, axis=0))[0]
        S = np.zeros((cols.size, blk.size, blk.size))
        S[:, blk.iu, blk.ju] = G[:, cols].T
        S[:, blk.ju, blk.iu] = G[:, cols].T
        B = Ci @ S @ Ci.T
        Bf = B.reshape(cols.size, -1)
        H[np.ix_(cols, cols)] += Bf @ Bf.T
    return val, g, H


def analytic_center(problem: MomentProblem, fixed_indices=(), fixed_values=(), start=None, tol: float = 1e-9,
                    max_iter: int = 200) -> np.ndarray:
    """Maximizer of ``sum_j log det M_j(y)`` over the equality constraints.

    The constraints are those of ``problem`` (invariance and normalization)
    plus ``y[fixed_indices] = fixed_values``. Infeasible-start Newton with a
    backtracking line search, started by default from the moments of the
    normalized Lebesgue measure on the box.

    Raises
    ------
    CenteringFailed
        If no strictly feasible point is reached.
    """
    ny = problem.y_size
    A = problem.A_eq.toarray()[:, :ny]
    if problem.A_eq.shape[1] > ny and problem.A_eq[:, ny:].nnz:
        raise CenteringFailed("equality constraints involve auxiliary variables")
    fixed_indices = np.asarray(fixed_indices, dtype=np.int64)
    sel = np.zeros((fixed_indices.size, ny))
    sel[np.arange(fixed_indices.size), fixed_indices] = 1.0
    Eq = np.vstack([A, sel])
    e = np.concatenate([problem.b_eq, np.asarray(fixed_values, dtype=float)])
    # orthonormal rows spanning the constraint space
    U, s, Vt = np.linalg.svd(Eq, full_matrices=False)
    r = int(np.sum(s > 1e-12 * s[0]))
    F = Vt[:r]
    f = (U[:, :r].T @ e) / s[:r]
    if np.linalg.norm(Eq @ (F.T @ f) - e) > 1e-8 * (1 + np.linalg.norm(e)):
        raise CenteringFailed("equality constraints are inconsistent")
    blocks = _block_data(problem)
    if start is None:
        mu = lebesgue_moments(problem.spec)
        y = mu / mu[0]
    else:
        y = np.asarray(start, dtype=float).copy()
    nu = np.zeros(r)
    cur = _barrier(blocks, y)
    if cur is None:
        raise CenteringFailed("starting point is not strictly feasible")

    def rnorm(g, y, nu):
        return np.sqrt(np.sum((g + F.T @ nu) ** 2) + np.sum((F @ y - f) ** 2))

    for _ in range(max_iter):
        _, g, H = cur
        rp = F @ y - f
        KKT = np.block([[H, F.T], [F, np.zeros((r, r))]])
        rhs = -np.concatenate([g + F.T @ nu, rp])
        try:
            step = np.linalg.solve(KKT, rhs)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(KKT, rhs, rcond=None)[0]
        dy, dnu = step[:ny], step[ny:]
        r0 = rnorm(g, y, nu)
        t = 1.0
        while True:
            # the Hessian is only needed at the accepted point
            cand = _barrier(blocks, y + t * dy, need_hessian=False)
            if cand is not None and rnorm(cand[1], y + t * dy, nu + t * dnu) <= (1 - 0.01 * t) * r0:
                break
            t *= 0.5
            if t < 1e-12:
                raise CenteringFailed("line search stalled")
        y = y + t * dy
        nu = nu + t * dnu
        cur = _barrier(blocks, y)
        feas = np.max(np.abs(Eq @ y - e))
        dec = float(dy @ (H @ dy)) if t == 1.0 else np.inf
        log.debug("center: step=%.3g feas=%.2e decrement=%.2e barrier=%.6g", t, feas, dec, cur[0])
        if feas < 1e-10 * (1 + np.max(np.abs(e))) and dec < tol:
            return y
    raise CenteringFailed(f"no convergence in {max_iter} Newton steps")


# ---------------------------------------------------------------------------
# convenience driver


def solve_problem(problem: MomentProblem, settings: SolverSettings | None = None, warm=None):
    """Solve a moment problem and return ``(y, report)``.

    For a moment-fit objective whose targets are reached (optimal value
    numerically zero) the optimal set is usually a whole face; in that case
    the returned ``y`` is the analytic centre of that face, which is the
    least-committal point consistent with the constraints and the targets.
    The ADMM point is kept if centering fails.
    """
    st = settings or SolverSettings()
    form = to_standard_form(problem)
    u, report = solve(form, st, problem.spec.dimension, warm=warm)
    y = u[: problem.y_size]
    fit = problem.objective if isinstance(problem.objective, MomentFit) else problem.fit
    if fit is not None:
        report.objective = fit.value(y)
        scale = max(1.0, float(np.linalg.norm(np.sqrt(fit.weights) * fit.targets)))
        if st.center and np.sqrt(max(report.objective, 0.0)) <= 1e-3 * scale:
            try:
                y = analytic_center(problem if not problem.soc else _unlifted(problem), fit.indices, fit.targets)
                report.centered = True
                report.objective = fit.value(y)
            except CenteringFailed as exc:
                report.notes.append(f"centering skipped: {exc}")
    return y, report


def _unlifted(problem: MomentProblem) -> MomentProblem:
    ny = problem.y_size
    return MomentProblem(problem.spec, problem.k, problem.l, problem.A_eq[:, :ny], problem.b_eq, problem.blocks,
                         problem.fit, [], ny, None)


__all__ = [
    "Cones",
    "ConicStandardForm",
    "SolveReport",
    "SolverSettings",
    "analytic_center",
    "psd_project",
    "smat",
    "soc_project",
    "solve",
    "solve_problem",
    "svec",
    "to_standard_form",
    "Linear",
]
