import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from semispde import gridio
from semispde.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main

NUMERIC = (".csv", ".json", ".psgf")


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def _numeric_files(d: Path) -> dict:
    # every numeric artifact except the manifest, which holds the wall clock
    return {
        str(f.relative_to(d)): f.read_bytes()
        for f in sorted(d.rglob("*"))
        if f.suffix in NUMERIC and f.name != "manifest.json"
    }


def _run(tmp_path, data, out, *extra):
    return main(["--config", str(_write(tmp_path, data)), "--out", str(out), *extra])


IDENTITIES = {
    "command": "verify-identities",
    "mesh": {"n": [1, 2], "N": 5},
    "mc": {"seed": 7},
    "options": {"samples": 10},
    "weights": {"tau_sweep": [1.0, 4.0]},
}


def test_identity_run_writes_report_and_manifest(tmp_path):
    out = tmp_path / "vi"
    assert _run(tmp_path, IDENTITIES, out) == EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "complete" and man["seeds"]["root"] == 7
    listed = {a["path"] for a in man["artifacts"]}
    assert {"identities.csv", "conjugation.csv", "report.json"} <= listed
    rows = list(csv.DictReader(open(out / "identities.csv")))
    assert rows and max(float(r["max_relative_residual"]) for r in rows) <= 1e-12
    conj = [r for r in csv.DictReader(open(out / "conjugation.csv")) if r["admissible"] == "true"]
    assert conj and max(float(r["conjugation"]) for r in conj) <= 1e-10


def test_manifest_is_written_last(tmp_path):
    out = tmp_path / "vi"
    _run(tmp_path, IDENTITIES, out)
    files = [f for f in out.iterdir() if f.is_file()]
    newest = max(files, key=lambda f: f.stat().st_mtime_ns)
    assert newest.name == "manifest.json"


SIMULATE = {
    "command": "simulate",
    "mesh": {"n": [1, 2], "N": 5},
    "time": {"T": 0.05},
    "problem": {"preset": "variable"},
    "mc": {"seed": 3, "n_paths": 12, "chunk": 5},
    "output": {"formats": ["json", "csv", "psgf"]},
}


def test_reruns_are_byte_identical_across_thread_counts(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(tmp_path, SIMULATE, a) == EXIT_OK
    assert _run(tmp_path, SIMULATE, b, "--threads", "3") == EXIT_OK
    fa, fb = _numeric_files(a), _numeric_files(b)
    assert fa and fa == fb
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    assert ma["artifacts"] == mb["artifacts"] and ma["config_hash"] == mb["config_hash"]


def test_trajectory_dumps_read_back(tmp_path):
    out = tmp_path / "sim"
    _run(tmp_path, SIMULATE, out)
    meta = json.loads((out / "trajectory_n1_N5.json").read_text())
    assert {"problem_hash", "seed", "T", "M", "N", "n"} <= set(meta)
    dumps = sorted(out.glob("trajectory_n1_N5_*.psgf"))
    assert len(dumps) == meta["M"] + 1
    first = gridio.read(dumps[0])
    assert first.values.shape == (meta["N"] + 2,)
    assert np.all(first.values[[0, -1]] == 0)


def test_seed_override_changes_numbers(tmp_path):
    _run(tmp_path, SIMULATE, tmp_path / "a")
    _run(tmp_path, SIMULATE, tmp_path / "b", "--seed", "4")
    a = (tmp_path / "a" / "terminal_energy.csv").read_bytes()
    b = (tmp_path / "b" / "terminal_energy.csv").read_bytes()
    assert a != b


def test_validation_errors_exit_2_and_list_everything(tmp_path, capsys):
    bad = {"command": "simulate", "mesh": {"n": 1, "N": 1}, "time": {"T": -1}, "typo": 3}
    assert _run(tmp_path, bad, tmp_path / "x") == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "mesh.N" in err and "time.T" in err and "typo" in err
    assert main(["--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert _run(tmp_path, SIMULATE, tmp_path / "x", "--threads", "0") == EXIT_CONFIG


def test_table_coefficient_length_is_a_config_error(tmp_path, capsys):
    cfg = dict(SIMULATE, mesh={"n": 1, "N": 5}, problem={"preset": "heat", "a2": {"table": [1.0, 2.0]}})
    assert _run(tmp_path, cfg, tmp_path / "x") == EXIT_CONFIG
    assert "problem.a2" in capsys.readouterr().err


def test_table_coefficient_is_used(tmp_path):
    cfg = dict(SIMULATE, mesh={"n": 1, "N": 5}, problem={"preset": "heat", "a2": {"table": [0.1] * 5}})
    assert _run(tmp_path, cfg, tmp_path / "t") == EXIT_OK


def test_numeric_failure_exits_3_with_failure_record(tmp_path):
    cfg = {"command": "simulate", "mesh": {"n": 1, "N": 4}, "problem": {"preset": None, "gamma": -1.0}, "mc": {"seed": 1}}
    out = tmp_path / "fail"
    assert _run(tmp_path, cfg, out) == EXIT_NUMERIC
    rec = json.loads((out / "failure.json").read_text())
    assert rec["status"] == "failed" and "partial_artifacts" in rec and rec["error"]
    assert not (out / "manifest.json").exists()


def test_stability_source_gives_three_level_table(tmp_path):
    cfg = {
        "command": "stability-source",
        "mesh": {"n": 1, "N_sweep": [5, 7, 9]},
        "time": {"T": 0.1},
        "mc": {"seed": 5, "n_paths": 6, "chunk": 3},
        "options": {"pairs": 2},
        "output": {"formats": ["json", "csv"]},
    }
    out = tmp_path / "ss"
    assert _run(tmp_path, cfg, out) == EXIT_OK
    rows = list(csv.DictReader(open(out / "source_stability_n1.csv")))
    assert sorted({int(r["N"]) for r in rows}) == [5, 7, 9] and len(rows) == 6
    assert all(np.isfinite(float(r["ratio"])) for r in rows)


def test_sweep_runs_every_point(tmp_path):
    cfg = {
        "command": "sweep",
        "mesh": {"n": 1, "N": 5},
        "mc": {"seed": 5, "n_paths": 4},
        "sweep": {"command": "simulate", "parameter": "time.T", "values": [0.02, 0.05]},
        "output": {"formats": ["json", "csv"]},
    }
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(tmp_path, cfg, a) == EXIT_OK
    assert _run(tmp_path, cfg, b, "--threads", "2") == EXIT_OK
    index = json.loads((a / "sweep.json").read_text())
    assert len(index["points"]) == 2
    for p in index["points"]:
        assert (a / p["directory"] / "manifest.json").exists()
    assert _numeric_files(a) == _numeric_files(b)


def test_bad_sweep_value_is_reported(tmp_path, capsys):
    cfg = {
        "command": "sweep",
        "mesh": {"n": 1, "N": 5},
        "mc": {"seed": 5},
        "sweep": {"command": "simulate", "parameter": "mesh.N", "values": [5, 1]},
    }
    assert _run(tmp_path, cfg, tmp_path / "s") == EXIT_CONFIG
    assert "sweep.values[1]" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, dict(IDENTITIES, mesh={"n": 1, "N": 3}))
    res = subprocess.run(
        [sys.executable, "-m", "semispde.cli", "--config", str(cfg), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "o" / "manifest.json").exists()


@pytest.mark.parametrize("name", sorted(p.stem for p in (Path(__file__).parents[1] / "configs").glob("*.json")))
def test_shipped_configs_validate(name):
    from semispde.config import load_config

    load_config(Path(__file__).parents[1] / "configs" / f"{name}.json")
