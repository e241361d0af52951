"""Configuration-driven experiment runs with cached, content-addressed artifacts.

A run goes snapshots -> Lie matrix -> moment problem -> solution -> recovered
measure. Each stage writes its artifact under ``<output>/cache`` with a name
derived from a hash of everything that determines it, and a later run with the
same inputs reloads the file instead of recomputing.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from .edmd import LieMatrix, edmd_lie_matrix, exact_lie_matrix
from .errors import ConfigError, ExtractionFailed, InvMeasureError, NewtonDiverged, NoCrossings, StageError
from .momentsdp import Linear, MomentFit, MomentProblem, SemialgebraicSet, assemble_problem, randomized_objectives
from .polybasis import CHEBYSHEV, FAMILIES, BasisSpec, PolyCoeffs, basis_size, eval_basis
from .recovery import (
    AtomicMeasure,
    HistogramDensity,
    SignedDensity,
    density_from_moments,
    extract_atoms,
)
from .sdpsolver import SolverSettings, solve_problem

log = logging.getLogger(__name__)

DEFAULT_OUT = "invmeasure-out"
DATA_KINDS = ("map", "sde", "ode", "section")


def output_root(path=None) -> Path:
    """Explicit path, else ``$INVMEASURE_OUT``, else ``./invmeasure-out``."""
    return Path(path or os.environ.get("INVMEASURE_OUT") or DEFAULT_OUT)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    """Everything a run needs, stored as plain JSON-compatible fields.

    Attributes
    ----------
    system : str
        Built-in system name (``logistic``, ``double_well``, ``rossler``).
    params : dict
        Keyword arguments for the system constructor.
    data : dict
        ``kind`` is one of ``map``, ``sde``, ``ode`` or ``section``; the
        remaining keys are passed to the matching simulator.
    basis : dict
        ``family``, ``k`` and ``l``.
    box : list or None
        Domain box; the system default (or the data range for sections)
        when omitted.
    lie : dict
        ``source`` (``data`` or ``exact``) and thresholding options.
    objective : dict
        ``fit``, ``linear`` or ``random`` (see ``build_objective``).
    solver : dict
        Fields of ``SolverSettings``.
    recovery : dict
        ``degree`` of the density (default ``k``), ``atoms`` flag and
        ``rank_tol``.
    """

    name: str = "experiment"
    system: str = "logistic"
    params: dict = field(default_factory=dict)
    data: dict = field(default_factory=lambda: {"kind": "map", "x0": 0.25, "m": 10_000})
    basis: dict = field(default_factory=lambda: {"family": CHEBYSHEV, "k": 5, "l": 10})
    box: list | None = None
    lie: dict = field(default_factory=lambda: {"source": "data"})
    objective: dict = field(default_factory=lambda: {"type": "fit", "indices": "first"})
    solver: dict = field(default_factory=dict)
    recovery: dict = field(default_factory=dict)
    output: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.system not in dyn.BUILTIN_SYSTEMS:
            raise ConfigError(f"unknown system {self.system!r}")
        b = self.basis
        for key in ("k", "l"):
            if not isinstance(b.get(key), int) or b[key] < 0:
                raise ConfigError(f"basis.{key} must be a non-negative integer")
        if b["l"] < b["k"]:
            raise ConfigError(f"basis.l = {b['l']} is below basis.k = {b['k']}")
        if b.get("family", CHEBYSHEV) not in FAMILIES:
            raise ConfigError(f"unknown basis family {b.get('family')!r}")
        if self.data.get("kind") not in DATA_KINDS:
            raise ConfigError(f"data.kind must be one of {DATA_KINDS}")
        if self.lie.get("source", "data") not in ("data", "exact"):
            raise ConfigError("lie.source must be 'data' or 'exact'")
        if self.objective.get("type") not in ("fit", "linear", "random"):
            raise ConfigError("objective.type must be 'fit', 'linear' or 'random'")
        known = set(SolverSettings.__dataclass_fields__)
        bad = set(self.solver) - known
        if bad:
            raise ConfigError(f"unknown solver settings {sorted(bad)}")

    @property
    def k(self) -> int:
        return self.basis["k"]

    @property
    def l(self) -> int:
        return self.basis["l"]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d)

    def replace(self, **changes) -> "ExperimentConfig":
        d = json.loads(json.dumps(self.to_dict()))
        for key, val in changes.items():
            if isinstance(val, dict) and isinstance(d.get(key), dict):
                d[key] = {**d[key], **val}
            else:
                d[key] = val
        return ExperimentConfig.from_dict(d)


def content_hash(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=_json_default).encode()
    return hashlib.sha256(blob).hexdigest()[:20]


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")
    return path


# ---------------------------------------------------------------------------
# stages


def make_system(config: ExperimentConfig) -> dyn.PolynomialSystem:
    return dyn.BUILTIN_SYSTEMS[config.system](**config.params)


def section_of(data: dict) -> dyn.PoincareSection:
    return dyn.PoincareSection(**data.get("section", {}))


def simulate(config: ExperimentConfig) -> dyn.SnapshotSet:
    """Generate the snapshot set described by ``config.data``."""
    system = make_system(config)
    d = dict(config.data)
    kind = d.pop("kind")
    box = config.box
    if kind == "map":
        return dyn.simulate_map(system, d.get("x0", 0.25), int(d["m"]), box=box)
    if kind == "sde":
        sigma = d.get("sigma", system.sigma)
        init_box = d.get("init_box", [[-0.5, 0.5]] * system.dimension)
        paths = int(d.get("paths", 1))
        if paths > 1:
            return dyn.simulate_sde_ensemble(system, sigma, d["tau"], int(d["steps"]), paths, int(d["seed"]),
                                             init_box=init_box, box=box)
        x0, rng = dyn.random_initial_condition(int(d["seed"]), init_box)
        snaps = dyn.simulate_sde(system, sigma, d["tau"], int(d["steps"]), x0, rng, box=box)
        snaps.meta["seed"] = int(d["seed"])
        return snaps
    if kind == "ode":
        snaps, _ = dyn.integrate_ode(system, d.get("x0"), d["t_end"], d["tau"], d["h"], box=box,
                                     keep_trajectory=False)
        return snaps
    return dyn.poincare_data(system, d.get("x0"), d["t_end"], d["h"], section_of(d), box=box,
                             margin=d.get("margin", 0.02))


def basis_spec(config: ExperimentConfig, snapshots: dyn.SnapshotSet | None = None) -> BasisSpec:
    if config.box is not None:
        box = config.box
    elif snapshots is not None:
        box = snapshots.box
    else:
        box = make_system(config).box
    return BasisSpec(config.basis.get("family", CHEBYSHEV), len(box), config.l, tuple(map(tuple, box)))


def build_lie(config: ExperimentConfig, snapshots: dyn.SnapshotSet | None, spec: BasisSpec) -> LieMatrix:
    opts = dict(config.lie)
    if opts.get("source", "data") == "exact":
        return exact_lie_matrix(make_system(config), config.k, config.l, spec)
    return edmd_lie_matrix(snapshots, config.k, config.l, spec, rank_tol=opts.get("rank_tol", 1e-10),
                           method=opts.get("method", "auto"), threshold=bool(opts.get("threshold", False)),
                           rel_cut=opts.get("rel_cut", 1e-3), max_rounds=opts.get("max_rounds", 20))


def _parse_index(key, n: int) -> tuple:
    if isinstance(key, str):
        return tuple(int(v) for v in key.split(","))
    return tuple(int(v) for v in np.atleast_1d(key))


def build_objective(config: ExperimentConfig, spec: BasisSpec, snapshots: dyn.SnapshotSet | None):
    """Objective described by ``config.objective``.

    ``fit``
        ``indices`` is ``"first"`` (all degree-one elements) or a list of
        multi-indices; ``targets`` is ``"data"`` (empirical moments),
        ``"zero"`` or a list; ``weights`` is ``"unit"`` or ``"relative"``.
    ``linear``
        ``terms`` maps ``"a,b"`` strings to coefficients; optional ``offset``.
    ``random``
        ``seed``; the ``index``-th of ``count`` sphere-uniform costs.
    """
    o = config.objective
    n = spec.dimension
    if o["type"] == "linear":
        c = np.zeros(basis_size(n, config.k))
        for key, val in o.get("terms", {}).items():
            c[spec.index_of(_parse_index(key, n))] += float(val)
        return Linear(c, float(o.get("offset", 0.0)))
    if o["type"] == "random":
        objs = randomized_objectives(config.k, int(o.get("count", 1)), int(o.get("seed", 0)), n)
        return objs[int(o.get("index", 0))]
    idx = o.get("indices", "first")
    if idx == "first":
        alphas = [tuple(int(i == d) for i in range(n)) for d in range(n)]
    else:
        alphas = [_parse_index(a, n) for a in idx]
    pos = [spec.index_of(a) for a in alphas]
    targets = o.get("targets", "data")
    if targets == "data":
        if snapshots is None:
            raise ConfigError("objective targets 'data' need snapshots")
        t = dyn.empirical_moments(snapshots, spec.with_degree(max(sum(a) for a in alphas)))[pos]
    elif targets == "zero":
        t = np.zeros(len(pos))
    else:
        t = np.asarray(targets, dtype=float)
    if o.get("weights", "unit") == "relative":
        return MomentFit.relative(pos, t)
    return MomentFit(pos, t, np.ones(len(pos)))


def settings_of(config: ExperimentConfig) -> SolverSettings:
    return SolverSettings(**config.solver)


@dataclass
class Bundle:
    """Artifacts of one run plus the paths they were written to."""

    config: ExperimentConfig
    snapshots: dyn.SnapshotSet | None = None
    lie: LieMatrix | None = None
    problem: MomentProblem | None = None
    y: np.ndarray | None = None
    report: dict | None = None
    density: SignedDensity | None = None
    atoms: AtomicMeasure | None = None
    paths: dict = field(default_factory=dict)
    hashes: dict = field(default_factory=dict)

    @property
    def spec(self) -> BasisSpec:
        return self.problem.spec if self.problem is not None else self.lie.spec


STAGES = ("simulate", "edmd", "assemble", "solve", "recover")


def _needs_snapshots(config: ExperimentConfig) -> bool:
    return config.lie.get("source", "data") == "data" or (
        config.objective["type"] == "fit" and config.objective.get("targets", "data") == "data") or (
        config.box is None and config.data.get("kind") == "section")


def run_pipeline(config: ExperimentConfig, until: str = "recover", out=None, use_cache: bool = True) -> Bundle:
    """Run the stages up to ``until`` and write every artifact.

    Raises
    ------
    StageError
        Wrapping the first stage failure, with the stage name attached.
    """
    if until not in STAGES:
        raise ConfigError(f"unknown stage {until!r}")
    root = output_root(out or config.output)
    cache = root / "cache"
    cache.mkdir(parents=True, exist_ok=True)
    b = Bundle(config)
    stop = STAGES.index(until)

    def cached(stage, h, suffix, build, save, load):
        path = cache / f"{stage}-{h}{suffix}"
        b.paths[stage] = path
        b.hashes[stage] = h
        if use_cache and path.exists():
            log.info("%s: reusing %s", stage, path.name)
            return load(path)
        try:
            obj = build()
        except InvMeasureError as exc:
            raise StageError(stage, exc) from exc
        save(obj, path)
        return obj

    h_sim = content_hash("simulate", config.system, config.params, config.data, config.box)
    if _needs_snapshots(config) or stop == 0:
        b.snapshots = cached("simulate", h_sim, ".npz", lambda: simulate(config), lambda o, p: o.save(p),
                             dyn.SnapshotSet.load)
    if stop == 0:
        return b
    spec = basis_spec(config, b.snapshots)
    h_lie = content_hash("edmd", h_sim if config.lie.get("source", "data") == "data" else config.system,
                         config.params, config.basis, config.lie, spec.to_dict())
    b.lie = cached("edmd", h_lie, ".csv", lambda: build_lie(config, b.snapshots, spec), lambda o, p: o.save(p),
                   LieMatrix.load)
    if stop == 1:
        return b
    h_prob = content_hash("assemble", h_lie, h_sim, config.objective)

    def assemble():
        obj = build_objective(config, spec, b.snapshots)
        return assemble_problem(b.lie, SemialgebraicSet.box(spec), obj)

    b.problem = cached("assemble", h_prob, ".json", assemble, lambda o, p: o.save(p), MomentProblem.load)
    if stop == 2:
        return b
    h_sol = content_hash("solve", h_prob, config.solver)

    def solve_stage():
        y, rep = solve_problem(b.problem, settings_of(config))
        d = rep.to_dict()
        d.pop("wall_time", None)
        return {"y": y.tolist(), "report": d}

    sol = cached("solve", h_sol, ".json", solve_stage, lambda o, p: write_json(p, o),
                 lambda p: json.loads(Path(p).read_text()))
    b.y = np.asarray(sol["y"])
    b.report = sol["report"]
    if stop == 3:
        return b
    rec = config.recovery
    r = int(rec.get("degree") or config.k)
    try:
        b.density = density_from_moments(b.y, r, spec)
    except InvMeasureError as exc:
        raise StageError("recover", exc) from exc
    run_dir = root / config.name
    run_dir.mkdir(parents=True, exist_ok=True)
    b.paths["density"] = write_json(run_dir / "density.json", b.density.to_dict())
    if rec.get("atoms"):
        try:
            b.atoms = extract_atoms(b.y, spec, rank_tol=rec.get("rank_tol", 1e-6))
            b.paths["atoms"] = write_json(run_dir / "atoms.json", b.atoms.to_dict())
        except ExtractionFailed as exc:
            log.warning("no atomic measure: %s", exc)
    summary = {"config": config.to_dict(), "hashes": b.hashes, "report": b.report,
               "objective": b.report.get("objective"),
               "atoms": None if b.atoms is None else b.atoms.to_dict()}
    b.paths["report"] = write_json(run_dir / "report.json", summary)
    return b


# ---------------------------------------------------------------------------
# unstable periodic orbits from section data


def split_cycles(field, points, section: dyn.PoincareSection, h: float = 1e-3, match_tol: float = 0.05):
    """Split a set of section atoms into cycles of the true return map.

    Each atom is sent through one return of the flow and linked to the atom
    nearest its image. Links longer than ``match_tol`` are discarded, and the
    cycles of the resulting successor graph are returned in visiting order.
    A support that mixes several orbits is thereby separated into them.
    """
    pts = np.asarray(points, dtype=float).ravel()
    if pts.size == 0:
        return []
    images = dyn.return_map(field, pts, section, h)
    succ = {}
    for i, img in enumerate(images):
        j = int(np.argmin(np.abs(pts - img)))
        if abs(pts[j] - img) <= match_tol:
            succ[i] = j
    cycles, seen = [], set()
    for start in range(pts.size):
        path, pos = [], {}
        i = start
        while i in succ and i not in pos and i not in seen:
            pos[i] = len(path)
            path.append(i)
            i = succ[i]
        seen.update(path)
        if i in pos:
            cycles.append(pts[path[pos[i]:]])
    return cycles


@dataclass
class UPOCatalog:
    """Distinct verified orbits, plus bookkeeping from the objective sweep."""

    orbits: list = field(default_factory=list)
    attempts: int = 0
    extracted: int = 0
    failures: dict = field(default_factory=dict)

    def periods(self) -> list[int]:
        return sorted({o.period for o in self.orbits})

    def by_period(self) -> dict:
        out: dict = {}
        for o in self.orbits:
            out.setdefault(o.period, []).append(o)
        return out

    def contains(self, orbit, tol: float) -> bool:
        a = np.sort(orbit.section_points)
        for o in self.orbits:
            if o.period == orbit.period and np.max(np.abs(np.sort(o.section_points) - a)) < tol:
                return True
        return False

    def to_dict(self) -> dict:
        return {"orbits": [o.to_dict() for o in self.orbits], "attempts": self.attempts,
                "extracted": self.extracted, "failures": self.failures, "periods": self.periods()}


def upo_hunt(lie: LieMatrix, field, section: dyn.PoincareSection, count: int = 200, seed: int = 0,
             settings: SolverSettings | None = None, max_period: int = 8, closure_tol: float = 1e-6,
             h: float = 1e-3, dedupe_tol: float = 1e-4, rank_tol: float = 1e-6, progress=None) -> UPOCatalog:
    """Sweep random linear costs, extract atoms and refine the orbits they mark.

    Parameters
    ----------
    lie : LieMatrix
        Data-driven Lie matrix of the 1D return map.
    field : PolynomialSystem
        The flow, used only to verify candidates by Newton shooting.
    count, seed : int
        Number and seed of the random objectives.
    max_period : int
        Longer cycles are skipped.
    closure_tol : float
        Orbits whose re-integration misses the start by more are rejected.
    dedupe_tol : float
        Atom and orbit identity tolerance, in units of the section box width.
    """
    spec = lie.spec
    width = spec.box[0][1] - spec.box[0][0]
    X = SemialgebraicSet.box(spec)
    base = assemble_problem(lie, X, Linear(np.zeros(basis_size(1, lie.k))))
    cat = UPOCatalog()
    tried: list = []
    for j, obj in enumerate(randomized_objectives(lie.k, count, seed, 1)):
        cat.attempts += 1
        problem = base.with_objective(Linear(np.concatenate([obj.c, np.zeros(spec.size - obj.c.size)])))
        _try_objective(str(j), problem, field, section, cat, tried, max_period, closure_tol, h,
                       dedupe_tol * width, rank_tol, settings)
        if progress is not None:
            progress(j, cat)
    cat.orbits.sort(key=lambda o: (o.period, float(np.min(o.section_points))))
    return cat


def _try_objective(key, problem, field, section, cat, tried, max_period, closure_tol, h, tol, rank_tol, settings):
    """Solve one problem and add every verified orbit its atoms lead to."""
    y, _ = solve_problem(problem, settings)
    try:
        atoms = extract_atoms(y, problem.spec, rank_tol=rank_tol)
    except ExtractionFailed as exc:
        cat.failures[key] = f"extraction: {exc}"
        return
    cat.extracted += 1
    support = np.sort(atoms.points[:, 0])
    if any(s.size == support.size and np.max(np.abs(s - support)) < tol for s in tried):
        return
    tried.append(support)
    try:
        cycles = split_cycles(field, support, section, h)
    except NoCrossings as exc:
        cat.failures[key] = f"return map: {exc}"
        return
    for cyc in cycles:
        if cyc.size > max_period:
            continue
        try:
            orbit = dyn.refine_upo(cyc, field, section, h=h)
        except (NewtonDiverged, NoCrossings) as exc:
            cat.failures[f"{key}:{cyc.size}"] = f"refine: {exc}"
            continue
        if not orbit.residual < closure_tol:
            cat.failures[f"{key}:{cyc.size}"] = f"closure residual {orbit.residual:.2e}"
            continue
        if not cat.contains(orbit, tol):
            cat.orbits.append(orbit)


def diagonal_data(snapshots: dyn.SnapshotSet, n: int) -> np.ndarray:
    """Pairs ``(x_i, x_{i+n})`` of the observed section coordinate."""
    seq = np.concatenate([snapshots.x[:, 0], snapshots.z[-1:, 0]])
    return np.stack([seq[:-n], seq[n:]], axis=1)


# ---------------------------------------------------------------------------
# reporting


def table_report(rows: list[dict], columns: list[str] | None = None, fmt: str = "{:.5g}") -> tuple[str, str]:
    """Render rows as ``(csv_text, plain_text)`` with a fixed column order."""
    if not rows:
        return "", ""
    columns = columns or list(rows[0])

    def cell(v):
        if isinstance(v, (float, np.floating)):
            return fmt.format(float(v))
        return "" if v is None else str(v)

    body = [[cell(r.get(c)) for c in columns] for r in rows]
    csv_text = "\n".join(",".join(line) for line in [columns] + body) + "\n"
    widths = [max(len(c), *(len(line[i]) for line in body)) for i, c in enumerate(columns)]
    plain = [" ".join(c.rjust(w) for c, w in zip(columns, widths))]
    plain.append(" ".join("-" * w for w in widths))
    plain += [" ".join(v.rjust(w) for v, w in zip(line, widths)) for line in body]
    return csv_text, "\n".join(plain) + "\n"


def plot_grid(measure, resolution: int, box=None) -> str:
    """Density values on a uniform grid as CSV (row-major, header first).

    Works for ``SignedDensity`` and ``HistogramDensity`` in one or two
    dimensions.
    """
    if box is None:
        box = measure.spec.box if isinstance(measure, SignedDensity) else measure.box
    n = len(box)
    axes = [np.linspace(a, b, resolution) for a, b in box]
    if n == 1:
        pts = axes[0][:, None]
        head = "x1,density"
    elif n == 2:
        g1, g2 = np.meshgrid(axes[0], axes[1], indexing="ij")
        pts = np.stack([g1.ravel(), g2.ravel()], axis=1)
        head = "x1,x2,density"
    else:
        raise ValueError("plot grids are limited to one or two dimensions")
    vals = np.asarray(measure(pts)).reshape(-1)
    lines = [head] + [",".join(f"{v:.12g}" for v in (*p, r)) for p, r in zip(pts, vals)]
    return "\n".join(lines) + "\n"


def chebyshev_observable(spec: BasisSpec, alpha) -> PolyCoeffs:
    """The single dictionary element ``b_alpha`` as a polynomial."""
    return PolyCoeffs.from_terms(spec.with_degree(sum(alpha)), {tuple(alpha): 1.0})


def monomial_observable(spec: BasisSpec, alpha) -> PolyCoeffs:
    """``x^alpha`` in original coordinates, expanded in the dictionary of ``spec``."""
    alpha = np.asarray(alpha)
    return PolyCoeffs.interpolate(spec.with_degree(int(alpha.sum())), lambda p: np.prod(p**alpha, axis=1))


def histogram_expectations(hist: HistogramDensity, observables) -> np.ndarray:
    return np.array([hist.expectation(g) for g in observables])


def density_expectations(y, spec: BasisSpec, observables) -> np.ndarray:
    """Expectations read directly off a moment vector."""
    y = np.asarray(y)
    return np.array([float(y[: g.spec.size] @ g.coeffs) for g in observables])


__all__ = [
    "Bundle",
    "ExperimentConfig",
    "UPOCatalog",
    "build_objective",
    "content_hash",
    "diagonal_data",
    "output_root",
    "plot_grid",
    "run_pipeline",
    "simulate",
    "split_cycles",
    "table_report",
    "upo_hunt",
    "eval_basis",
]
