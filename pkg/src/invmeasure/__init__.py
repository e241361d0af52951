"""Data-driven invariant measures from snapshot data via moment relaxations.

The workflow is: simulate or load snapshots, estimate a Lie-derivative matrix
by EDMD, assemble a moment SDP, solve it, and recover a signed density or an
atomic measure from the optimal moments.
"""

from .dynamics import (
    PoincareSection,
    PolynomialSystem,
    SnapshotSet,
    double_well,
    empirical_moments,
    integrate_ode,
    logistic_map,
    poincare_data,
    refine_upo,
    rossler,
    simulate_map,
    simulate_sde,
    time_averages,
)
from .edmd import LieMatrix, edmd_lie_matrix, exact_lie_matrix, threshold_refine
from .errors import ConfigError, InvMeasureError, StageError
from .momentsdp import Linear, MomentFit, MomentProblem, SemialgebraicSet, assemble_problem, randomized_objectives
from .polybasis import BasisSpec, PolyCoeffs
from .recovery import (
    AtomicMeasure,
    SignedDensity,
    density_from_moments,
    expectation,
    extract_atoms,
    histogram_density,
)
from .sdpsolver import SolverSettings, solve_problem

__version__ = "0.1.0"

__all__ = [
    "AtomicMeasure",
    "BasisSpec",
    "ConfigError",
    "InvMeasureError",
    "LieMatrix",
    "Linear",
    "MomentFit",
    "MomentProblem",
    "PoincareSection",
    "PolyCoeffs",
    "PolynomialSystem",
    "SemialgebraicSet",
    "SignedDensity",
    "SnapshotSet",
    "SolverSettings",
    "StageError",
    "assemble_problem",
    "density_from_moments",
    "double_well",
    "edmd_lie_matrix",
    "empirical_moments",
    "exact_lie_matrix",
    "expectation",
    "extract_atoms",
    "histogram_density",
    "integrate_ode",
    "logistic_map",
    "poincare_data",
    "randomized_objectives",
    "refine_upo",
    "rossler",
    "simulate_map",
    "simulate_sde",
    "solve_problem",
    "threshold_refine",
    "time_averages",
]
