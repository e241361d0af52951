"""Snapshot generation for maps, SDEs and ODEs, plus periodic-orbit refinement."""

from __future__ import annotations

import io
import json
import math
import warnings
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .errors import (
    NewtonDiverged,
    NoCrossings,
    NonFiniteState,
    OrbitEscaped,
    SimulationDiverged,
)
from .polybasis import BasisSpec, MonomialPoly, OutsideBoxWarning, PolyCoeffs, eval_basis, field_arrays

Box = tuple[tuple[float, float], ...]

# ---------------------------------------------------------------------------
# systems


@dataclass(frozen=True)
class PolynomialSystem:
    """A polynomial map, ODE or SDE with additive isotropic noise.

    Parameters
    ----------
    name : str
    kind : {"map", "ode", "sde"}
    field : tuple of MonomialPoly
        Map components or drift/vector-field components, in raw coordinates.
    box : tuple of (lo, hi) pairs
        Domain used for dictionary scaling and the drop rule.
    sigma : float
        Noise amplitude (``kind == "sde"`` only).
    """

    name: str
    kind: str
    field: tuple
    box: Box
    sigma: float = 0.0

    @property
    def dimension(self) -> int:
        return len(self.field)

    def arrays(self):
        return field_arrays(self.field)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([np.atleast_1d(p(x)) for p in self.field], axis=-1).squeeze()

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "field": [p.to_dict() for p in self.field],
            "box": [list(b) for b in self.box],
            "sigma": self.sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolynomialSystem":
        return cls(
            d["name"],
            d["kind"],
            tuple(MonomialPoly.from_dict(p) for p in d["field"]),
            tuple(tuple(float(v) for v in b) for b in d["box"]),
            float(d.get("sigma", 0.0)),
        )


def logistic_map() -> PolynomialSystem:
    """Chebyshev-form logistic map ``x -> 2x^2 - 1`` on [-1, 1]."""
    return PolynomialSystem("logistic", "map", (MonomialPoly({(2,): 2.0, (0,): -1.0}),), ((-1.0, 1.0),))


def double_well(sigma: float = 0.75) -> PolynomialSystem:
    """Two-dimensional double-well SDE with drift ``-16(x1+x2)^3 + ...``."""
    cube = {(3, 0): -16.0, (2, 1): -48.0, (1, 2): -48.0, (0, 3): -16.0}
    f1 = MonomialPoly({**cube, (1, 0): 2.0, (0, 1): 6.0})
    f2 = MonomialPoly({**cube, (1, 0): 6.0, (0, 1): 2.0})
    return PolynomialSystem("double_well", "sde", (f1, f2), ((-1.0, 1.0), (-1.0, 1.0)), float(sigma))


def rossler(a: float = 0.1, b: float = 0.1, c: float = 18.0) -> PolynomialSystem:
    f1 = MonomialPoly({(0, 1, 0): -1.0, (0, 0, 1): -1.0})
    f2 = MonomialPoly({(1, 0, 0): 1.0, (0, 1, 0): a})
    f3 = MonomialPoly({(0, 0, 0): b, (1, 0, 1): 1.0, (0, 0, 1): -c})
    return PolynomialSystem("rossler", "ode", (f1, f2, f3), ((-30.0, 30.0), (-30.0, 30.0), (0.0, 60.0)))


def quadratic_map() -> PolynomialSystem:
    """``x -> 2x - x^2`` on [0, 1]; with fixed points 0 and 1."""
    return PolynomialSystem("quadratic", "map", (MonomialPoly({(1,): 2.0, (2,): -1.0}),), ((0.0, 1.0),))


BUILTIN_SYSTEMS: dict[str, Callable[..., PolynomialSystem]] = {
    "logistic": logistic_map,
    "quadratic": quadratic_map,
    "double_well": double_well,
    "rossler": rossler,
}


def _as_system(f, kind: str, box=None) -> PolynomialSystem:
    if isinstance(f, PolynomialSystem):
        return f
    if isinstance(f, str):
        return BUILTIN_SYSTEMS[f]()
    comps = [f] if isinstance(f, (MonomialPoly, PolyCoeffs)) else list(f)
    comps = [_to_monomial(p) for p in comps]
    n = comps[0].dimension
    if box is None:
        box = ((-1.0, 1.0),) * n
    return PolynomialSystem("custom", kind, tuple(comps), tuple(tuple(map(float, b)) for b in box))


def _to_monomial(p) -> MonomialPoly:
    if isinstance(p, MonomialPoly):
        return p
    if isinstance(p, PolyCoeffs):
        # expand a Chebyshev/monomial expansion into raw monomials
        spec = p.spec
        terms: dict = {}
        for alpha, c in zip(spec.indices, p.coeffs):
            if c == 0:
                continue
            factors = []
            for d, a in enumerate(alpha):
                if spec.family == "chebyshev":
                    ch = np.polynomial.chebyshev.Chebyshev.basis(a, domain=list(spec.box[d])).convert(
                        kind=np.polynomial.Polynomial
                    )
                    factors.append(ch.coef)
                else:
                    e = np.zeros(a + 1)
                    e[a] = 1.0
                    factors.append(e)
            for idx in np.ndindex(*[len(f) for f in factors]):
                v = c * np.prod([f[i] for f, i in zip(factors, idx)])
                terms[idx] = terms.get(idx, 0.0) + v
        return MonomialPoly(terms, spec.dimension)
    raise TypeError(f"cannot use {type(p).__name__} as a polynomial component")


# ---------------------------------------------------------------------------
# snapshot container


@dataclass
class SnapshotSet:
    """Pairs ``(x_i, z_i)`` with ``z_i`` the state one step ``tau`` after ``x_i``.

    Attributes
    ----------
    x, z : ndarray, shape (m, n)
    tau : float
    box : tuple of (lo, hi) pairs
    meta : dict
        JSON-serializable provenance (system, seed, step sizes).
    """

    x: np.ndarray
    z: np.ndarray
    tau: float
    box: Box
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.ascontiguousarray(np.asarray(self.x, dtype=float).reshape(len(self.x), -1))
        self.z = np.ascontiguousarray(np.asarray(self.z, dtype=float).reshape(len(self.z), -1))
        self.box = tuple((float(a), float(b)) for a, b in self.box)
        if self.x.shape != self.z.shape:
            raise ValueError("x and z must have the same shape")
        if self.x.shape[0] < 1:
            raise ValueError("a snapshot set needs at least one pair")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @property
    def m(self) -> int:
        return self.x.shape[0]

    @property
    def dimension(self) -> int:
        return self.x.shape[1]

    def __len__(self):
        return self.m

    def header(self) -> dict:
        return {"n": self.dimension, "m": self.m, "tau": self.tau, "box": [list(b) for b in self.box],
                "meta": self.meta}

    def concat(self, other: "SnapshotSet") -> "SnapshotSet":
        return SnapshotSet(np.vstack([self.x, other.x]), np.vstack([self.z, other.z]), self.tau, self.box,
                           dict(self.meta))

    # CSV layout: '# key: json' header lines, then one row per pair with
    # columns x_1..x_n, z_1..z_n written with 17 significant digits.
    def save(self, path) -> Path:
        path = Path(path)
        if path.suffix == ".csv":
            cols = [f"x{i + 1}" for i in range(self.dimension)] + [f"z{i + 1}" for i in range(self.dimension)]
            lines = [f"# {k}: {json.dumps(v, sort_keys=True)}" for k, v in self.header().items()]
            lines.append("# columns: " + ",".join(cols))
            buf = io.StringIO()
            np.savetxt(buf, np.hstack([self.x, self.z]), fmt="%.17g", delimiter=",")
            path.write_text("\n".join(lines) + "\n" + buf.getvalue())
        else:
            _write_npz(path, {"x": self.x, "z": self.z}, self.header())
        return path

    @classmethod
    def load(cls, path) -> "SnapshotSet":
        path = Path(path)
        if path.suffix == ".csv":
            head = {}
            with open(path) as fh:
                for line in fh:
                    if not line.startswith("#"):
                        break
                    key, _, val = line[1:].strip().partition(": ")
                    if key != "columns":
                        head[key] = json.loads(val)
            data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
            n = head["n"]
            return cls(data[:, :n], data[:, n:], head["tau"], head["box"], head["meta"])
        arrays, head = _read_npz(path)
        return cls(arrays["x"], arrays["z"], head["tau"], head["box"], head["meta"])


_EPOCH = (1980, 1, 1, 0, 0, 0)


def _write_npz(path: Path, arrays: dict, header: dict):
    # fixed timestamps so identical content gives identical bytes
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(zipfile.ZipInfo("header.json", _EPOCH), json.dumps(header, sort_keys=True))
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", _EPOCH), buf.getvalue())


def _read_npz(path: Path):
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("header.json"))
        arrays = {
            Path(name).stem: np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)
            for name in zf.namelist()
            if name.endswith(".npy")
        }
    return arrays, header


def _in_box(pts: np.ndarray, box: Box, slack: float = 0.0) -> np.ndarray:
    lo = np.array([b[0] for b in box]) - slack
    hi = np.array([b[1] for b in box]) + slack
    return np.all((pts >= lo) & (pts <= hi), axis=1)


# ---------------------------------------------------------------------------
# discrete maps


def simulate_map(f, x0, m: int, box=None, escape_tol: float = 1e-12) -> SnapshotSet:
    """Iterate a map ``m`` times from ``x0`` and return the pairs ``(x_i, f(x_i))``.

    Parameters
    ----------
    f : PolynomialSystem, str, MonomialPoly, PolyCoeffs, sequence of those, or callable
        The map. Built-in names come from ``BUILTIN_SYSTEMS``.
    x0 : float or array_like
    m : int
        Number of snapshot pairs (the orbit has ``m + 1`` points).
    box : sequence of (lo, hi), optional
        Domain; defaults to the system box or [-1, 1]^n.

    Raises
    ------
    OrbitEscaped
        If an iterate leaves the box.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if callable(f) and not isinstance(f, (PolynomialSystem, MonomialPoly, PolyCoeffs)):
        x = np.atleast_1d(np.asarray(x0, dtype=float))
        box = tuple(box) if box is not None else ((-1.0, 1.0),) * x.size
        orbit = np.empty((m + 1, x.size))
        orbit[0] = x
        for t in range(m):
            orbit[t + 1] = np.atleast_1d(f(orbit[t]))
            if not _in_box(orbit[t + 1 : t + 2], box, escape_tol)[0]:
                raise OrbitEscaped(f"iterate {t + 1} left the domain box: {orbit[t + 1]}")
        name = getattr(f, "__name__", "callable")
    else:
        system = _as_system(f, "map", box)
        box = tuple(box) if box is not None else system.box
        x = np.atleast_1d(np.asarray(x0, dtype=float))
        if not _in_box(x[None], box, escape_tol)[0]:
            raise OrbitEscaped("initial point outside the domain box")
        lo = np.array([b[0] for b in box])
        hi = np.array([b[1] for b in box])
        bad, orbit = K.iterate_map(*system.arrays(), x, int(m), lo, hi, escape_tol)
        if bad >= 0:
            raise OrbitEscaped(f"iterate {bad} left the domain box: {orbit[-1]}")
        name = system.name
    meta = {"system": name, "x0": np.atleast_1d(np.asarray(x0, dtype=float)).tolist(), "steps": int(m)}
    return SnapshotSet(orbit[:-1], orbit[1:], 1.0, box, meta)


# ---------------------------------------------------------------------------
# stochastic differential equations


def _abort_radius(box: Box) -> float:
    return 10.0 * max(max(abs(a), abs(b)) for a, b in box)


def simulate_sde(drift, sigma: float, tau: float, steps: int, x0, seed, box=None,
                 chunk: int = 1_000_000) -> SnapshotSet:
    """Euler-Maruyama realization of ``dX = a(X) dt + sigma dW``.

    Pairs with either endpoint outside ``box`` are dropped. The run aborts
    with ``SimulationDiverged`` once any coordinate exceeds ten times the
    box radius.

    Parameters
    ----------
    drift : PolynomialSystem, str or sequence of MonomialPoly
    sigma : float
    tau : float
        Time step, also the snapshot lag.
    steps : int
    x0 : array_like
    seed : int, SeedSequence or Generator
        Source of the Gaussian increments.
    box : sequence of (lo, hi), optional
    chunk : int
        Number of steps generated per block (memory bound only).
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    system = _as_system(drift, "sde", box)
    box = tuple(box) if box is not None else system.box
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    arrays = system.arrays()
    x = np.asarray(x0, dtype=float).reshape(-1).copy()
    n = x.size
    abort = _abort_radius(box)
    scale = sigma * math.sqrt(tau)
    xs, zs = [], []
    done = 0
    while done < steps:
        b = min(chunk, steps - done)
        noise = rng.standard_normal((b, n))
        status, path = K.euler_maruyama(*arrays, x, float(tau), noise, scale, abort)
        if status != 0:
            raise SimulationDiverged(f"state left the abort radius {abort} after {done + len(path) - 1} steps")
        keep = _in_box(path[:-1], box) & _in_box(path[1:], box)
        xs.append(path[:-1][keep])
        zs.append(path[1:][keep])
        x = path[-1].copy()
        done += b
    X = np.concatenate(xs)
    Z = np.concatenate(zs)
    if len(X) == 0:
        raise SimulationDiverged("no snapshot pair stayed inside the box")
    seed_meta = seed if isinstance(seed, (int, np.integer)) else None
    meta = {"system": system.name, "sigma": float(sigma), "tau": float(tau), "steps": int(steps),
            "seed": None if seed_meta is None else int(seed_meta), "x0": np.asarray(x0, float).ravel().tolist()}
    return SnapshotSet(X, Z, tau, box, meta)


def simulate_sde_ensemble(drift, sigma: float, tau: float, steps: int, n_paths: int, seed: int,
                          init_box=None, box=None) -> SnapshotSet:
    """Independent realizations from uniform random initial conditions.

    Each path ``j`` draws its start and its increments from child ``j`` of
    ``SeedSequence(seed).spawn(n_paths)``, so results do not depend on the
    order in which paths are run.
    """
    system = _as_system(drift, "sde", box)
    n = system.dimension
    init_box = np.asarray(init_box if init_box is not None else [(-0.5, 0.5)] * n, dtype=float)
    out = None
    for child in np.random.SeedSequence(seed).spawn(n_paths):
        rng = np.random.default_rng(child)
        x0 = rng.uniform(init_box[:, 0], init_box[:, 1])
        s = simulate_sde(system, sigma, tau, steps, x0, rng, box)
        out = s if out is None else out.concat(s)
    out.meta = {"system": system.name, "sigma": float(sigma), "tau": float(tau), "steps": int(steps),
                "paths": int(n_paths), "seed": int(seed)}
    return out


def random_initial_condition(seed: int, init_box) -> tuple[np.ndarray, np.random.Generator]:
    """Uniform start in ``init_box`` and the generator to continue the run with."""
    rng = np.random.default_rng(seed)
    init_box = np.asarray(init_box, dtype=float)
    return rng.uniform(init_box[:, 0], init_box[:, 1]), rng


# ---------------------------------------------------------------------------
# ordinary differential equations


@dataclass
class Trajectory:
    """Dense samples of an ODE solution with the vector field at each sample."""

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray

    @property
    def dimension(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class PoincareSection:
    """The hyperplane ``x[coord] == level`` crossed in the given direction.

    ``direction`` is +1 (increasing), -1 (decreasing) or 0 (both);
    ``observed`` selects the coordinate recorded at each crossing.
    """

    coord: int = 0
    level: float = 0.0
    direction: int = 1
    observed: int = 1

    def to_dict(self) -> dict:
        return {"coord": self.coord, "level": self.level, "direction": self.direction, "observed": self.observed}


def _steps_per(tau: float, h: float) -> int:
    r = tau / h
    k = int(round(r))
    if k < 1 or abs(r - k) > 1e-9 * max(1.0, r):
        raise ValueError("the sampling interval must be a positive multiple of the internal step")
    return k


def _field_at(system: PolynomialSystem, states: np.ndarray) -> np.ndarray:
    return np.stack([p(states) for p in system.field], axis=1)


_NO_MOMENTS = np.zeros((0, 1), dtype=np.int64)


def integrate_ode(field, x0, t_end: float, tau: float, h: float, box=None, keep_trajectory: bool = True):
    """Fixed-step RK4 integration sampled every ``tau``.

    Parameters
    ----------
    field : PolynomialSystem, str or sequence of MonomialPoly
    x0 : array_like
    t_end : float
    tau : float
        Sampling interval; must be a multiple of ``h``.
    h : float
        Internal step.
    box : sequence of (lo, hi), optional
        Pairs leaving the box are dropped; defaults to the system box.

    Returns
    -------
    snapshots : SnapshotSet
    trajectory : Trajectory or None
    """
    system = _as_system(field, "ode", box)
    box = tuple(box) if box is not None else system.box
    every = _steps_per(tau, h)
    n_steps = int(round(t_end / h))
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    status, samples, *_ = K.integrate(*system.arrays(), x0, float(h), n_steps, every, True, -1, 0.0, 0, 1, 1e-12,
                                      np.zeros((0, x0.size), dtype=np.int64))
    if status == 1 or not np.all(np.isfinite(samples)):
        raise NonFiniteState("the integration produced a non-finite state")
    keep = _in_box(samples[:-1], box) & _in_box(samples[1:], box)
    snaps = SnapshotSet(samples[:-1][keep], samples[1:][keep], tau, box,
                        {"system": system.name, "x0": x0.tolist(), "t_end": float(t_end), "h": float(h),
                         "tau": float(tau)})
    traj = None
    if keep_trajectory:
        times = np.arange(samples.shape[0]) * (every * h)
        traj = Trajectory(times, samples, _field_at(system, samples))
    return snaps, traj


def time_averages(field, x0, t_end: float, tau: float, h: float, exponents) -> np.ndarray:
    """Mean of the monomials ``x^alpha`` over samples taken every ``tau`` up to ``t_end``.

    Runs in constant memory, so long horizons are cheap to average over.
    """
    system = _as_system(field, "ode")
    every = _steps_per(tau, h)
    n_steps = int(round(t_end / h))
    exps = np.asarray(exponents, dtype=np.int64).reshape(-1, system.dimension)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    status, _, _, _, _, sums, final = K.integrate(*system.arrays(), x0, float(h), n_steps, every, False, -1, 0.0,
                                                  0, 1, 1e-12, exps)
    if status == 1 or not np.all(np.isfinite(final)):
        raise NonFiniteState("the integration produced a non-finite state")
    return sums / math.ceil(n_steps / every)


def _direction_ok(system, states, section: PoincareSection) -> np.ndarray:
    if section.direction == 0 or len(states) == 0:
        return np.ones(len(states), dtype=bool)
    vel = system.field[section.coord](states)
    return np.sign(vel) == np.sign(section.direction)


def section_crossings(field, x0, t_end: float, h: float, section: PoincareSection, tol: float = 1e-12,
                      max_crossings: int = 10_000_000):
    """Crossing times and full states of a streamed RK4 trajectory.

    Each crossing is bracketed by two internal steps and located by bisection
    on the cubic Hermite interpolant built from the end states and the field.
    """
    system = _as_system(field, "ode")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    n_steps = int(round(t_end / h))
    cap = int(min(max_crossings, n_steps + 1))
    status, _, states, times, _, _, final = K.integrate(
        *system.arrays(), x0, float(h), n_steps, 1, False, int(section.coord), float(section.level),
        int(section.direction), cap, tol, np.zeros((0, x0.size), dtype=np.int64))
    if status == 1:
        raise NonFiniteState("the integration produced a non-finite state")
    ok = _direction_ok(system, states, section)
    return times[ok], states[ok]


def _hermite_crossings(traj: Trajectory, section: PoincareSection, tol: float):
    c, lvl = section.coord, section.level
    v = traj.states[:, c] - lvl
    a, b = v[:-1], v[1:]
    if section.direction > 0:
        idx = np.nonzero((a < 0) & (b >= 0))[0]
    elif section.direction < 0:
        idx = np.nonzero((a > 0) & (b <= 0))[0]
    else:
        idx = np.nonzero(((a < 0) & (b >= 0)) | ((a > 0) & (b <= 0)))[0]
    times, states = [], []
    out = np.empty(traj.dimension)
    for i in idx:
        dt = traj.times[i + 1] - traj.times[i]
        s = K.locate_crossing(traj.states[i], traj.derivs[i], traj.states[i + 1], traj.derivs[i + 1], dt, c, lvl,
                              tol, out)
        times.append(traj.times[i] + s * dt)
        states.append(out.copy())
    return np.array(times), np.array(states).reshape(-1, traj.dimension)


def poincare_snapshots(trajectory: Trajectory, section: PoincareSection, field=None, box=None,
                       tol: float = 1e-12, margin: float = 0.02) -> SnapshotSet:
    """Return-map pairs of the observed coordinate at consecutive crossings.

    Parameters
    ----------
    trajectory : Trajectory
        Dense samples with derivatives.
    section : PoincareSection
    field : PolynomialSystem, optional
        Used to confirm the crossing direction from the vector field; when
        omitted the interpolated derivative is used.
    box : (lo, hi), optional
        Domain of the 1D data. Defaults to the data range widened by
        ``margin`` of its width on each side.

    Raises
    ------
    NoCrossings
        If fewer than two crossings are found.
    """
    times, states = _hermite_crossings(trajectory, section, tol)
    if field is not None:
        system = _as_system(field, "ode")
        ok = _direction_ok(system, states, section)
    elif section.direction != 0 and len(states):
        vel = np.array([np.interp(t, trajectory.times, trajectory.derivs[:, section.coord]) for t in times])
        ok = np.sign(vel) == np.sign(section.direction)
    else:
        ok = np.ones(len(states), dtype=bool)
    return _section_set(times[ok], states[ok], section, box, margin, {"source": "trajectory"})


def _section_set(times, states, section, box, margin, meta) -> SnapshotSet:
    if len(states) < 2:
        raise NoCrossings(f"found {len(states)} crossings; at least two are needed")
    obs = states[:, section.observed]
    if box is None:
        box = (data_box(obs[:, None], margin)[0],)
    else:
        box = (tuple(np.ravel(box)),)
    meta = {**meta, "section": section.to_dict(), "crossings": int(len(obs))}
    snaps = SnapshotSet(obs[:-1], obs[1:], 1.0, box, meta)
    snaps.crossing_times = times
    snaps.crossing_states = states
    return snaps


def poincare_data(field, x0, t_end: float, h: float, section: PoincareSection, box=None,
                  margin: float = 0.02) -> SnapshotSet:
    """Stream an ODE and collect its return-map pairs without storing the path."""
    system = _as_system(field, "ode")
    times, states = section_crossings(system, x0, t_end, h, section)
    meta = {"system": system.name, "x0": np.asarray(x0, float).ravel().tolist(), "t_end": float(t_end),
            "h": float(h)}
    return _section_set(times, states, section, box, margin, meta)


def data_box(points: np.ndarray, margin: float = 0.02) -> Box:
    """Axis-aligned bounding box of ``points`` widened by ``margin`` of each width."""
    points = np.asarray(points, dtype=float).reshape(len(points), -1)
    lo, hi = points.min(axis=0), points.max(axis=0)
    w = np.maximum(hi - lo, 1e-12)
    return tuple((float(a - margin * d), float(b + margin * d)) for a, b, d in zip(lo, hi, w))


# ---------------------------------------------------------------------------
# periodic orbits


@dataclass
class PeriodicOrbit:
    """A closed orbit crossing a Poincare section ``period`` times.

    Attributes
    ----------
    period : int
        Number of section crossings (minimal).
    section_points : ndarray, shape (period,)
        Observed coordinate at each crossing, in orbit order.
    T : float
        Continuous period.
    flight_times : ndarray
    start_states : ndarray, shape (period, n)
    samples : ndarray
        Full states along one period.
    newton_residual : float
        Multiple-shooting residual at convergence.
    residual : float
        ``|Phi_T(x0) - x0|`` from one uninterrupted re-integration.
    iterations : int
    requested_period : int
    """

    period: int
    section_points: np.ndarray
    T: float
    flight_times: np.ndarray
    start_states: np.ndarray
    samples: np.ndarray
    newton_residual: float
    residual: float
    iterations: int
    requested_period: int

    @property
    def wrong_period(self) -> bool:
        return self.period != self.requested_period

    def to_dict(self) -> dict:
        return {
            "period": self.period,
            "section_points": self.section_points.tolist(),
            "T": self.T,
            "flight_times": self.flight_times.tolist(),
            "start_states": self.start_states.tolist(),
            "newton_residual": self.newton_residual,
            "residual": self.residual,
            "iterations": self.iterations,
            "requested_period": self.requested_period,
        }


def _section_state(value: float, n: int, section: PoincareSection) -> np.ndarray:
    s = np.zeros(n)
    s[section.coord] = section.level
    s[section.observed] = value
    return s


def first_return(field, state, section: PoincareSection, h: float = 1e-3, t_max: float = 1000.0,
                 tol: float = 1e-12):
    """Time and state of the next crossing after leaving ``state``."""
    system = _as_system(field, "ode")
    arrays = system.arrays()
    x = np.asarray(state, dtype=float)
    t0 = 0.0
    # skip crossings flagged with the wrong velocity sign
    for _ in range(100):
        found, t, y = K.next_crossing(*arrays, x, h, t_max - t0, section.coord, section.level,
                                      section.direction, tol, 1)
        if not found:
            raise NoCrossings("no return to the section within t_max")
        t0 += t
        if _direction_ok(system, y[None], section)[0]:
            return t0, y
        x = y
    raise NoCrossings("no admissible return to the section")


def return_map(field, values, section: PoincareSection, h: float = 1e-3) -> np.ndarray:
    """Observed coordinate after one return, starting from section points."""
    system = _as_system(field, "ode")
    values = np.atleast_1d(np.asarray(values, dtype=float))
    out = np.empty_like(values)
    for i, v in enumerate(values):
        _, y = first_return(system, _section_state(v, system.dimension, section), section, h)
        out[i] = y[section.observed]
    return out


def order_cycle(field, points, section: PoincareSection, h: float = 1e-3):
    """Arrange unordered section points of a cycle in the order the flow visits them.

    Returns
    -------
    ordered : ndarray
    mismatch : float
        Largest distance between an image and the atom chosen as its successor.
    """
    pts = list(np.asarray(points, dtype=float).ravel())
    if not pts:
        return np.array([]), 0.0
    images = dict(zip(range(len(pts)), return_map(field, pts, section, h)))
    order = [0]
    mismatch = 0.0
    left = set(range(1, len(pts)))
    while left:
        img = images[order[-1]]
        nxt = min(left, key=lambda j: abs(pts[j] - img))
        mismatch = max(mismatch, abs(pts[nxt] - img))
        order.append(nxt)
        left.remove(nxt)
    mismatch = max(mismatch, abs(pts[0] - images[order[-1]]))
    return np.array([pts[j] for j in order]), mismatch


def refine_upo(seeds, field, section: PoincareSection, h: float = 1e-3, tol: float = 1e-9,
               max_iter: int = 50, dedupe_tol: float = 1e-6, n_samples: int = 400) -> PeriodicOrbit:
    """Newton multiple shooting for a periodic orbit through the given section points.

    The unknowns are, for each crossing, the free coordinates of the start
    state on the section (all except ``section.coord``) and the flight time
    to the next crossing. Each segment keeps a fixed number of RK4 steps so
    the residual is smooth in the flight time. Jacobian columns come from
    forward differences with step ``1e-7 * (1 + |v|)``.

    Parameters
    ----------
    seeds : array_like, shape (p,)
        Observed-coordinate values of the cycle, in orbit order.
    field : PolynomialSystem
    section : PoincareSection
    h : float
        Target internal step.
    tol : float
        Convergence threshold on the max-norm shooting residual.
    dedupe_tol : float
        Points closer than this are considered the same crossing when
        testing whether the orbit closes after fewer crossings.

    Raises
    ------
    NewtonDiverged
        If the residual stops decreasing or ``max_iter`` is reached.
    """
    system = _as_system(field, "ode")
    arrays = system.arrays()
    n = system.dimension
    seeds = np.atleast_1d(np.asarray(seeds, dtype=float))
    p = seeds.size
    free = [d for d in range(n) if d != section.coord]

    starts = np.array([_section_state(v, n, section) for v in seeds])
    T = np.empty(p)
    for i in range(p):
        T[i], _ = first_return(system, starts[i], section, h)
    steps = np.maximum(1, np.ceil(T / h).astype(np.int64))

    def unpack(v):
        s = np.tile(starts[0], (p, 1))
        s[:, section.coord] = section.level
        blk = v.reshape(p, n)
        s[:, free] = blk[:, : n - 1]
        return s, blk[:, n - 1]

    def pack(s, t):
        return np.hstack([s[:, free], t[:, None]]).ravel()

    def segment(s, t, i):
        return K.flow(*arrays, s, t, int(steps[i]))

    def residual(v):
        s, t = unpack(v)
        if np.any(t <= 0):
            return None
        r = np.empty((p, n))
        for i in range(p):
            r[i] = segment(s[i], t[i], i) - s[(i + 1) % p]
        return r.ravel()

    v = pack(starts, T)
    r = residual(v)
    norm = np.max(np.abs(r))
    it = 0
    while norm >= tol:
        if it >= max_iter:
            raise NewtonDiverged(f"residual {norm:.3e} after {max_iter} iterations")
        s, t = unpack(v)
        J = np.zeros((p * n, p * n))
        for i in range(p):
            base = r[i * n : (i + 1) * n] + s[(i + 1) % p]
            for j in range(n):
                w = v.copy()
                k = i * n + j
                dv = 1e-7 * (1.0 + (np.linalg.norm(s[i]) if j < n - 1 else abs(t[i])))
                w[k] += dv
                si, ti = unpack(w)
                J[i * n : (i + 1) * n, k] = (segment(si[i], ti[i], i) - base) / dv
            nxt = (i + 1) % p
            for j, d in enumerate(free):
                J[i * n + d, nxt * n + j] -= 1.0
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        lam = 1.0
        accepted = False
        for _ in range(12):
            w = v + lam * step
            rw = residual(w)
            if rw is not None and np.all(np.isfinite(rw)) and np.max(np.abs(rw)) < norm:
                accepted = True
                break
            lam *= 0.5
        it += 1
        if not accepted:
            raise NewtonDiverged(f"residual stalled at {norm:.3e} after {it} iterations")
        v, r = w, rw
        norm = np.max(np.abs(r))

    s, t = unpack(v)
    points = s[:, section.observed]
    q = minimal_period(s, dedupe_tol)
    s, t, points, steps_q = s[:q], t[:q], points[:q], steps[:q]
    T_total = float(t.sum())
    N = int(steps_q.sum())
    every = max(1, N // n_samples)
    samples = K.flow_samples(*arrays, s[0], T_total, N, every)
    end = K.flow(*arrays, s[0], T_total, N)
    closure = float(np.linalg.norm(end - s[0]))
    return PeriodicOrbit(q, points.copy(), T_total, t.copy(), s.copy(), samples, float(norm), closure, it, p)


def minimal_period(states: np.ndarray, tol: float) -> int:
    """Smallest ``q`` dividing ``len(states)`` such that the sequence repeats with period ``q``."""
    p = len(states)
    for q in range(1, p):
        if p % q == 0 and np.max(np.abs(np.roll(states, -q, axis=0) - states)) < tol:
            return q
    return p


# ---------------------------------------------------------------------------
# moments from data


def empirical_moments(snapshots, spec: BasisSpec, batch: int = 200_000) -> np.ndarray:
    """Average of the dictionary over the snapshot points ``x_i``.

    Entry 0 is set to exactly 1.
    """
    x = snapshots.x if isinstance(snapshots, SnapshotSet) else np.asarray(snapshots, dtype=float)
    x = x.reshape(len(x), -1) if spec.dimension > 1 or x.ndim > 1 else x.reshape(-1, 1)
    if len(x) < 1:
        raise ValueError("need at least one point")
    total = np.zeros(spec.size)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OutsideBoxWarning)
        for start in range(0, len(x), batch):
            blk = x[start : start + batch]
            total += eval_basis(spec, blk if spec.dimension > 1 else blk[:, 0]).reshape(len(blk), -1).sum(axis=0)
    y = total / len(x)
    y[0] = 1.0
    return y
