"""Config handling, cached pipeline runs, tables and plot grids."""

import json

import numpy as np
import pytest
from scipy.integrate import trapezoid

from invmeasure import dynamics as dyn
from invmeasure.errors import ConfigError, StageError
from invmeasure.pipeline import (
    ExperimentConfig,
    content_hash,
    diagonal_data,
    output_root,
    plot_grid,
    run_pipeline,
    split_cycles,
    table_report,
)
from invmeasure.polybasis import BasisSpec, PolyCoeffs
from invmeasure.recovery import SignedDensity, density_from_moments, histogram_density

QUADRATIC = dict(name="quad", system="quadratic", data={"kind": "map", "x0": 0.5, "m": 10},
                 basis={"family": "monomial", "k": 1, "l": 2}, lie={"source": "exact"},
                 objective={"type": "linear", "terms": {"1": -1.0}})


def logistic_config(**kw):
    base = dict(name="logi", data={"kind": "map", "x0": 0.25, "m": 2000}, basis={"family": "chebyshev", "k": 5, "l": 10})
    base.update(kw)
    return ExperimentConfig(**base)


# -- configuration ---------------------------------------------------------------


def test_config_round_trip(tmp_path):
    c = logistic_config(solver={"max_iter": 1000}, recovery={"atoms": True})
    back = ExperimentConfig.load(c.save(tmp_path / "c.json"))
    assert back == c
    assert back.save(tmp_path / "d.json").read_text() == (tmp_path / "c.json").read_text()


@pytest.mark.parametrize("bad", [
    {"basis": {"k": 5, "l": 3}},
    {"system": "lorenz"},
    {"data": {"kind": "flow"}},
    {"objective": {"type": "maximize"}},
    {"solver": {"tolerance": 1.0}},
    {"basis": {"family": "legendre", "k": 1, "l": 2}},
])
def test_invalid_configs_are_rejected(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig(**bad)


def test_load_rejects_unknown_keys_and_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"name": "x", "colour": "red"}))
    with pytest.raises(ConfigError):
        ExperimentConfig.load(p)
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(p)


def test_replace_merges_nested_fields():
    c = logistic_config().replace(basis={"k": 3, "l": 6})
    assert c.basis == {"family": "chebyshev", "k": 3, "l": 6}
    with pytest.raises(ConfigError):
        logistic_config().replace(basis={"l": 1})


def test_output_root(monkeypatch, tmp_path):
    monkeypatch.delenv("INVMEASURE_OUT", raising=False)
    assert str(output_root()) == "invmeasure-out"
    monkeypatch.setenv("INVMEASURE_OUT", str(tmp_path))
    assert output_root() == tmp_path
    assert output_root("elsewhere").name == "elsewhere"


def test_content_hash_is_order_free():
    assert content_hash({"a": 1, "b": np.arange(3)}) == content_hash({"b": [0, 1, 2], "a": 1})
    assert content_hash({"a": 1}) != content_hash({"a": 2})


# -- pipeline runs -------------------------------------------------------------------


def test_regression_example_through_the_pipeline(tmp_path):
    b = run_pipeline(ExperimentConfig(**QUADRATIC), out=tmp_path)
    assert b.snapshots is None
    np.testing.assert_allclose(b.y, [1, 1, 1], atol=1e-6)
    assert b.report["objective"] == pytest.approx(-1.0, abs=1e-6)
    report = json.loads((tmp_path / "quad" / "report.json").read_text())
    assert report["report"]["status"] == "optimal"


def test_stages_are_cached_and_deterministic(tmp_path):
    c = logistic_config()
    a = run_pipeline(c, out=tmp_path / "a")
    blobs = {k: p.read_bytes() for k, p in a.paths.items()}
    again = run_pipeline(c, out=tmp_path / "a")
    assert {k: p.read_bytes() for k, p in again.paths.items()} == blobs
    fresh = run_pipeline(c, out=tmp_path / "b", use_cache=False)
    assert {k: p.read_bytes() for k, p in fresh.paths.items()} == blobs
    np.testing.assert_array_equal(fresh.y, a.y)


def test_cache_reuse_skips_recomputation(tmp_path, monkeypatch):
    c = logistic_config()
    run_pipeline(c, until="solve", out=tmp_path)
    import invmeasure.pipeline as pl

    def boom(*a, **k):
        raise AssertionError("recomputed")

    monkeypatch.setattr(pl, "simulate", boom)
    monkeypatch.setattr(pl, "solve_problem", boom)
    b = run_pipeline(c, until="solve", out=tmp_path)
    assert b.report["status"] == "optimal"


def test_changed_inputs_change_downstream_hashes(tmp_path):
    a = run_pipeline(logistic_config(), until="assemble", out=tmp_path)
    b = run_pipeline(logistic_config(objective={"type": "random", "seed": 3}), until="assemble", out=tmp_path)
    assert a.hashes["edmd"] == b.hashes["edmd"]
    assert a.hashes["assemble"] != b.hashes["assemble"]


def test_stop_after_simulate(tmp_path):
    b = run_pipeline(logistic_config(), until="simulate", out=tmp_path)
    assert b.lie is None and b.snapshots.m == 2000
    with pytest.raises(ConfigError):
        run_pipeline(logistic_config(), until="plot", out=tmp_path)


def test_stage_failures_name_the_stage(tmp_path):
    c = logistic_config(data={"kind": "map", "x0": 1.5, "m": 10})
    with pytest.raises(StageError) as info:
        run_pipeline(c, out=tmp_path)
    assert info.value.stage == "simulate"


def test_atoms_from_a_config(tmp_path):
    c = logistic_config(lie={"source": "exact"}, objective={"type": "linear", "terms": {"1": 1.0}},
                        recovery={"atoms": True})
    b = run_pipeline(c, out=tmp_path)
    np.testing.assert_allclose(b.atoms.points[:, 0], [-0.5], atol=1e-4)
    assert (tmp_path / "logi" / "atoms.json").exists()


def test_fit_objective_options(tmp_path):
    c = logistic_config(objective={"type": "fit", "indices": [[2]], "targets": [0.1], "weights": "relative"})
    b = run_pipeline(c, until="assemble", out=tmp_path)
    assert b.problem.objective.indices.tolist() == [2]
    np.testing.assert_allclose(b.problem.objective.weights, [100.0])


# -- periodic orbit helpers ---------------------------------------------------------

ROTATION = dyn.PolynomialSystem(
    "rotation", "ode",
    (dyn.MonomialPoly({(0, 1): -1.0}), dyn.MonomialPoly({(1, 0): 1.0})), ((-2.0, 2.0), (-2.0, 2.0)))


def test_split_cycles_on_a_rotation():
    sec = dyn.PoincareSection(0, 0.0, 1, 1)
    cycles = split_cycles(ROTATION, [-1.0, -0.5], sec)
    assert sorted(c.tolist() for c in cycles) == [[-1.0], [-0.5]]
    assert split_cycles(ROTATION, [], sec) == []


def test_diagonal_data():
    seq = np.arange(6.0)
    s = dyn.SnapshotSet(seq[:-1, None], seq[1:, None], 1.0, ((0, 5),))
    np.testing.assert_array_equal(diagonal_data(s, 2), np.stack([seq[:-2], seq[2:]], 1))


# -- reporting -------------------------------------------------------------------------


def test_table_report_layout():
    rows = [{"row": "m=100", "k=5": 0.0290213, "y1": -0.001}, {"row": "exact", "k=5": 0.03, "y1": None}]
    csv_text, plain = table_report(rows)
    assert csv_text.splitlines() == ["row,k=5,y1", "m=100,0.029021,-0.001", "exact,0.03,"]
    lines = plain.splitlines()
    assert len(lines) == 4 and len({len(line) for line in lines}) == 1
    assert table_report([]) == ("", "")
    assert table_report(rows) == (csv_text, plain)


def test_plot_grid_of_a_constant_density():
    spec = BasisSpec("chebyshev", 1, 0, ((-1.0, 1.0),))
    text = plot_grid(SignedDensity(PolyCoeffs(spec, [0.5])), 11)
    lines = text.splitlines()
    assert lines[0] == "x1,density" and len(lines) == 12
    np.testing.assert_allclose([float(line.split(",")[1]) for line in lines[1:]], 0.5)


def test_plot_grid_of_a_two_dimensional_density(tmp_path):
    c = ExperimentConfig(name="dw", system="double_well",
                         data={"kind": "sde", "tau": 1e-4, "steps": 50_000, "seed": 0},
                         basis={"family": "chebyshev", "k": 10, "l": 12},
                         objective={"type": "fit", "indices": [[2, 0], [0, 2]]},
                         solver={"max_iter": 4000})
    b = run_pipeline(c, until="solve", out=tmp_path)
    rho = density_from_moments(b.y, 10, b.spec)
    grid = np.loadtxt(plot_grid(rho, 101).splitlines()[1:], delimiter=",")
    assert grid.shape == (101 * 101, 3) and np.all(np.isfinite(grid))
    # trapezoid rule over the exported grid
    vals = grid[:, 2].reshape(101, 101)
    x = np.linspace(-1, 1, 101)
    assert trapezoid(trapezoid(vals, x, axis=1), x) == pytest.approx(1.0, rel=0.02)


def test_plot_grid_of_a_histogram_and_bad_dimension():
    h = histogram_density(np.array([[0.1, 0.1], [0.6, 0.6]]), 2, ((0, 1), (0, 1)))
    lines = plot_grid(h, 3).splitlines()
    assert lines[0] == "x1,x2,density" and len(lines) == 10
    spec = BasisSpec("chebyshev", 3, 0)
    with pytest.raises(ValueError):
        plot_grid(SignedDensity(PolyCoeffs(spec, [0.125])), 3)
