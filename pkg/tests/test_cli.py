"""Command-line behaviour: exit codes, outputs and determinism."""

import json
import subprocess
import sys

import pytest

from invmeasure.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, build_parser, main
from invmeasure.pipeline import ExperimentConfig

QUADRATIC = dict(name="quad", system="quadratic", data={"kind": "map", "x0": 0.5, "m": 10},
                 basis={"family": "monomial", "k": 1, "l": 2}, lie={"source": "exact"},
                 objective={"type": "linear", "terms": {"1": -1.0}})


@pytest.fixture
def config_file(tmp_path):
    def make(**kw):
        path = tmp_path / f"{kw.get('name', 'c')}.json"
        path.write_text(json.dumps(kw))
        return str(path)

    return make


def test_parser_lists_every_subcommand():
    sub = build_parser()._subparsers._group_actions[0].choices
    assert set(sub) == {"simulate", "edmd", "assemble", "solve", "recover", "atoms", "upo", "replicate-table1",
                        "replicate-doublewell", "replicate-rossler"}


def test_solve_and_recover(config_file, tmp_path, capsys):
    path = config_file(**QUADRATIC)
    assert main(["--out", str(tmp_path / "o"), "solve", path]) == EXIT_OK
    assert "status=optimal objective=-1" in capsys.readouterr().out
    assert main(["--out", str(tmp_path / "o"), "recover", path]) == EXIT_OK
    assert (tmp_path / "o" / "quad" / "density.json").exists()


def test_output_root_from_environment(config_file, tmp_path, monkeypatch):
    monkeypatch.setenv("INVMEASURE_OUT", str(tmp_path / "env"))
    assert main(["simulate", config_file(name="l", data={"kind": "map", "x0": 0.25, "m": 50})]) == EXIT_OK
    assert list((tmp_path / "env" / "cache").glob("simulate-*.npz"))


def test_config_errors_exit_2(config_file, tmp_path, capsys):
    assert main(["--out", str(tmp_path), "solve", config_file(basis={"k": 4, "l": 2})]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert main(["--out", str(tmp_path), "solve", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(["--out", str(tmp_path), "upo", config_file(name="u")]) == EXIT_CONFIG


def test_stage_failures_exit_3(config_file, tmp_path, capsys):
    path = config_file(data={"kind": "map", "x0": 2.0, "m": 10})
    assert main(["--out", str(tmp_path), "simulate", path]) == EXIT_STAGE
    assert "simulate" in capsys.readouterr().err


def test_atoms_command(config_file, tmp_path, capsys):
    path = config_file(name="fp", basis={"family": "chebyshev", "k": 5, "l": 10}, lie={"source": "exact"},
                       objective={"type": "linear", "terms": {"1": 1.0}})
    assert main(["--out", str(tmp_path), "atoms", path]) == EXIT_OK
    out = capsys.readouterr().out
    assert "-0.50000" in out and "weight=1.000000" in out
    # a diffuse solution has no atoms: stage failure
    diffuse = config_file(name="d", basis={"family": "chebyshev", "k": 5, "l": 10}, lie={"source": "exact"},
                          objective={"type": "fit", "indices": [[1]], "targets": [0.0]})
    assert main(["--out", str(tmp_path), "atoms", diffuse]) == EXIT_STAGE


def test_replicate_table1_small(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "replicate-table1", "--m", "100"]) == EXIT_OK
    csv_text = (tmp_path / "table1" / "table.csv").read_text().splitlines()
    assert csv_text[0] == "row,k=5,k=10,k=15,k=20,k=25,y1"
    assert [line.split(",")[0] for line in csv_text[1:]] == ["m=100", "exact"]


def test_cli_runs_are_byte_identical(config_file, tmp_path):
    path = config_file(name="det", data={"kind": "map", "x0": 0.25, "m": 500},
                       basis={"family": "chebyshev", "k": 4, "l": 8})
    outs = []
    for d in ("a", "b"):
        assert main(["--out", str(tmp_path / d), "recover", path, "--no-cache"]) == EXIT_OK
        outs.append(sorted((p.relative_to(tmp_path / d).as_posix(), p.read_bytes())
                           for p in (tmp_path / d).rglob("*") if p.is_file()))
    assert outs[0] == outs[1]


def test_module_entry_point(tmp_path):
    cfg = ExperimentConfig(**QUADRATIC).save(tmp_path / "q.json")
    r = subprocess.run([sys.executable, "-m", "invmeasure.cli", "--out", str(tmp_path), "solve", str(cfg)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "status=optimal" in r.stdout
