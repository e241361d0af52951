"""Replication runs for the worked examples: logistic map, double well, Rossler.

Each function returns plain rows (lists of dicts) so that the CLI, the demos
and the acceptance tests share one implementation.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import dynamics as dyn
from .edmd import edmd_lie_matrix, exact_lie_matrix
from .momentsdp import Linear, MomentFit, SemialgebraicSet, assemble_problem
from .pipeline import UPOCatalog, monomial_observable, upo_hunt
from .polybasis import BasisSpec, MonomialPoly, PolyCoeffs
from .recovery import (
    cdf_and_l1,
    density_from_moments,
    double_well_expectations,
    expectation,
    extract_atoms,
    histogram_density,
    logistic_cdf,
)
from .sdpsolver import SolverSettings, solve_problem

log = logging.getLogger(__name__)

UNIT = ((-1.0, 1.0),)
SQUARE = ((-1.0, 1.0), (-1.0, 1.0))
ROSSLER_BOX = ((-30.0, 30.0), (-30.0, 30.0), (0.0, 60.0))
ROSSLER_X0 = (0.0, -20.0, 0.0)
DOUBLE_WELL_OBSERVABLES = tuple((a, s - a) for s in (2, 4, 6) for a in range(s, -1, -1))


def _fit_first(L, target: float):
    spec = L.spec
    return assemble_problem(L, SemialgebraicSet.box(spec), MomentFit([1], [target], [1.0]))


# ---------------------------------------------------------------------------
# logistic map


def logistic_l1(L, k: int, target: float, settings: SolverSettings | None = None) -> dict:
    """Solve the degree-``k`` fit problem and measure the CDF error of the density."""
    t0 = time.perf_counter()
    y, rep = solve_problem(_fit_first(L, target), settings)
    density = density_from_moments(y, k, L.spec)
    err = cdf_and_l1(density, logistic_cdf)
    return {"k": k, "l1": err, "status": rep.status, "seconds": time.perf_counter() - t0}


def table1(ks=(5, 10, 15, 20, 25), ms=(100, 1000, 10_000, 100_000), exact: bool = True, x0: float = 0.25,
           settings: SolverSettings | None = None) -> list[dict]:
    """Grid of L1 CDF errors: one row per orbit length ``m`` plus the exact-generator row.

    Data rows fit the empirical first moment of the orbit; the exact row uses
    the exact generator and the target ``0``. Columns are ``k=<k>`` plus ``y1``.
    """
    rows = []
    for m in ms:
        snaps = dyn.simulate_map(dyn.logistic_map(), x0, m)
        row = {"row": f"m={m}"}
        for k in ks:
            spec = BasisSpec("chebyshev", 1, 2 * k, UNIT)
            L = edmd_lie_matrix(snaps, k, 2 * k, spec)
            target = float(dyn.empirical_moments(snaps, spec.with_degree(1))[1])
            row[f"k={k}"] = logistic_l1(L, k, target, settings)["l1"]
        row["y1"] = float(dyn.empirical_moments(snaps, BasisSpec("chebyshev", 1, 1, UNIT))[1])
        rows.append(row)
    if exact:
        row = {"row": "exact"}
        for k in ks:
            spec = BasisSpec("chebyshev", 1, 2 * k, UNIT)
            L = exact_lie_matrix(dyn.logistic_map(), k, 2 * k, spec)
            row[f"k={k}"] = logistic_l1(L, k, 0.0, settings)["l1"]
        row["y1"] = 0.0
        rows.append(row)
    return rows


def table2(m: int = 1000, k: int = 20, bins: int = 101, degrees=(2, 4, 6, 8, 10, 20, 30, 40), x0: float = 0.25,
           settings: SolverSettings | None = None) -> list[dict]:
    """Relative errors of even monomial moments: SDP density versus histogram.

    The exact moments of the arcsine law are ``binom(j, j/2) / 2^j``.
    """
    snaps = dyn.simulate_map(dyn.logistic_map(), x0, m)
    spec = BasisSpec("chebyshev", 1, 2 * k, UNIT)
    L = edmd_lie_matrix(snaps, k, 2 * k, spec)
    target = float(dyn.empirical_moments(snaps, spec.with_degree(1))[1])
    y, _ = solve_problem(_fit_first(L, target), settings)
    density = density_from_moments(y, k, spec)
    hist = histogram_density(snaps, bins, UNIT)
    rows = []
    for j in degrees:
        exact = comb(j, j // 2) / 2**j
        g = PolyCoeffs.interpolate(spec.with_degree(j), lambda p, j=j: p[:, 0] ** j)
        sdp = expectation(density, g)
        histo = hist.expectation(MonomialPoly({(j,): 1.0}, 1), j)
        rows.append({"moment": j, "exact": exact, "sdp": sdp, "sdp_err": abs(sdp / exact - 1),
                     "histogram": histo, "hist_err": abs(histo / exact - 1)})
    return rows


def logistic_atoms(m: int = 10_000, k: int = 5, objectives=(1, 3, 5), x0: float = 0.25,
                   settings: SolverSettings | None = None) -> list[dict]:
    """Minimize ``F(y) = y_j`` and extract the atomic minimizer."""
    snaps = dyn.simulate_map(dyn.logistic_map(), x0, m)
    spec = BasisSpec("chebyshev", 1, 2 * k, UNIT)
    L = edmd_lie_matrix(snaps, k, 2 * k, spec)
    rows = []
    for j in objectives:
        c = np.zeros(k + 1)
        c[j] = 1.0
        y, rep = solve_problem(assemble_problem(L, SemialgebraicSet.box(spec), Linear(c)), settings)
        atoms = extract_atoms(y, spec)
        rows.append({"objective": j, "value": rep.objective, "atoms": atoms.points[:, 0].tolist(),
                     "weights": atoms.weights.tolist(), "status": rep.status})
    return rows


# ---------------------------------------------------------------------------
# double well


def _chebyshev_product(alpha):
    a, b = alpha

    def g(p):
        return np.cos(a * np.arccos(np.clip(p[:, 0], -1, 1))) * np.cos(b * np.arccos(np.clip(p[:, 1], -1, 1)))

    return g


@dataclass
class DoubleWellResult:
    rows: list
    report: dict
    seconds: float
    snapshots: int
    lie_report: dict = field(default_factory=dict)


def double_well_table(steps: int = 500_000, k: int = 10, l: int = 12, sigma: float = 0.75, tau: float = 1e-4,
                      seed: int = 0, threshold: bool = True, bins: int = 50,
                      settings: SolverSettings | None = None) -> DoubleWellResult:
    """Chebyshev expectations from the SDP (objective maximizing E[x1^2 + x2^2]) and a histogram."""
    t0 = time.perf_counter()
    system = dyn.double_well(sigma)
    x0, rng = dyn.random_initial_condition(seed, [(-0.5, 0.5)] * 2)
    snaps = dyn.simulate_sde(system, sigma, tau, steps, x0, rng, box=SQUARE)
    spec = BasisSpec("chebyshev", 2, l, SQUARE)
    L = edmd_lie_matrix(snaps, k, l, spec, threshold=threshold)
    c = np.zeros(spec.with_degree(k).size)
    c[spec.index_of((2, 0))] = -1.0
    c[spec.index_of((0, 2))] = -1.0
    y, rep = solve_problem(assemble_problem(L, SemialgebraicSet.box(spec), Linear(c, -2.0)), settings)
    hist = histogram_density(snaps, bins, SQUARE)
    observables = [_chebyshev_product(a) for a in DOUBLE_WELL_OBSERVABLES]
    exact = double_well_expectations(observables, sigma)
    rows = []
    for alpha, ex in zip(DOUBLE_WELL_OBSERVABLES, exact):
        sdp = float(y[spec.index_of(alpha)])
        g = PolyCoeffs.from_terms(spec.with_degree(sum(alpha)), {alpha: 1.0})
        histo = hist.expectation(g, sum(alpha))
        rows.append({"alpha": alpha, "exact": float(ex), "sdp": sdp, "sdp_err": abs(sdp / ex - 1),
                     "histogram": histo, "hist_err": abs(histo / ex - 1)})
    return DoubleWellResult(rows, rep.to_dict(), time.perf_counter() - t0, len(snaps), dict(L.report))


# ---------------------------------------------------------------------------
# Rossler


def rossler_moments(t_end: float = 1000.0, k: int = 14, l: int = 15, tau: float = 0.005, h: float = 1e-3,
                    t_average: float = 1e5, settings: SolverSettings | None = None) -> list[dict]:
    """Physical-measure density from a relative fit of the first moments.

    Monomial moments up to degree two of the recovered density are compared
    with long time averages. Without explicit settings the solver runs for at
    most 15 minutes and returns the ADMM point without centering: the
    invariance constraints leave almost no strict interior here, so the
    centering Newton iteration does not converge.
    """
    if settings is None:
        settings = SolverSettings(time_limit=900.0, center=False)
    system = dyn.rossler()
    snaps, _ = dyn.integrate_ode(system, ROSSLER_X0, t_end, tau, h, box=ROSSLER_BOX, keep_trajectory=False)
    spec = BasisSpec("chebyshev", 3, l, ROSSLER_BOX)
    L = edmd_lie_matrix(snaps, k, l, spec)
    first = [spec.index_of(a) for a in ((1, 0, 0), (0, 1, 0), (0, 0, 1))]
    targets = dyn.empirical_moments(snaps, spec.with_degree(1))[first]
    problem = assemble_problem(L, SemialgebraicSet.box(spec), MomentFit.relative(first, targets))
    y, rep = solve_problem(problem, settings)
    density = density_from_moments(y, k, spec)
    exps = [e for e in np.ndindex(3, 3, 3) if 0 < sum(e) <= 2]
    averages = dyn.time_averages(system, ROSSLER_X0, t_average, tau, h, exps)
    rows = []
    for e, avg in zip(exps, averages):
        pred = expectation(density, monomial_observable(spec, e))
        rows.append({"alpha": e, "time_average": float(avg), "density": pred, "rel_err": abs(pred / avg - 1),
                     "status": rep.status})
    return rows


def rossler_section(t_end: float = 5000.0, h: float = 1e-3):
    """Section ``x1 = 0`` crossed upward, recording ``x2``."""
    section = dyn.PoincareSection(coord=0, level=0.0, direction=1, observed=1)
    snaps = dyn.poincare_data(dyn.rossler(), ROSSLER_X0, t_end, h, section)
    return snaps, section


def rossler_upos(t_end: float = 5000.0, k: int = 20, l: int = 80, count: int = 200, seed: int = 0,
                 max_period: int = 8, settings: SolverSettings | None = None, progress=None) -> UPOCatalog:
    """Random linear costs on section data, atoms, then Newton shooting on the flow.

    Without explicit ``settings`` each solve runs at most 8000 ADMM iterations
    to 1e-6 tolerances. Extraction only needs the low-rank structure of the
    moment matrix, and Newton shooting polishes the orbits afterwards.
    """
    if settings is None:
        settings = SolverSettings(eps_abs=1e-6, eps_rel=1e-6, max_iter=8000)
    snaps, section = rossler_section(t_end)
    spec = BasisSpec("chebyshev", 1, l, snaps.box)
    L = edmd_lie_matrix(snaps, k, l, spec)
    cat = upo_hunt(L, dyn.rossler(), section, count=count, seed=seed, settings=settings, max_period=max_period,
                   progress=progress)
    cat.failures["_pairs"] = str(len(snaps))
    return cat


__all__ = [
    "DOUBLE_WELL_OBSERVABLES",
    "DoubleWellResult",
    "double_well_table",
    "logistic_atoms",
    "logistic_l1",
    "rossler_moments",
    "rossler_section",
    "rossler_upos",
    "table1",
    "table2",
]
