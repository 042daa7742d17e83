import json

import pytest

from semispde.config import ConfigError, load_config, parse_config, set_path, with_overrides


def _base(**extra):
    data = {"command": "simulate", "mesh": {"n": 1, "N": 7}, "mc": {"seed": 1}}
    data.update(extra)
    return data


def test_minimal_config_fills_defaults():
    cfg = parse_config(_base())
    assert cfg.time.T == 0.5 and cfg.problem.preset == "heat"
    assert cfg.mesh.levels == [7] and cfg.time.steps(7) == 128


def test_error_names_the_field():
    with pytest.raises(ConfigError) as err:
        parse_config(_base(mesh={"n": 1, "N": 1}))
    assert any(e.startswith("mesh.N") for e in err.value.errors)


def test_mesh_size_and_sweep_are_exclusive():
    with pytest.raises(ConfigError, match="either N or N_sweep"):
        parse_config(_base(mesh={"n": 1, "N": 7, "N_sweep": [7, 15]}))


def test_every_problem_is_reported():
    with pytest.raises(ConfigError) as err:
        parse_config(_base(time={"T": -1}, typo=3))
    joined = " | ".join(err.value.errors)
    assert "time.T" in joined and "typo" in joined
    assert len(err.value.errors) >= 2


def test_random_commands_need_a_seed():
    with pytest.raises(ConfigError, match="mc.seed"):
        parse_config({"command": "observe", "mesh": {"n": 1, "N": 7}})
    parse_config({"command": "verify-energy", "mesh": {"n": 1, "N": 7}})


def test_unreadable_files_are_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)
    good = tmp_path / "good.json"
    good.write_text(json.dumps(_base()))
    assert load_config(good).command == "simulate"


def test_set_path_copies():
    data = _base()
    out = set_path(data, "weights.tau", 4.0)
    assert out["weights"]["tau"] == 4.0 and "weights" not in data


def test_digest_ignores_output_directory_only():
    cfg = parse_config(_base())
    moved = with_overrides(cfg, out="/elsewhere")
    assert moved.output.directory == "/elsewhere"
    assert moved.digest() == cfg.digest()
    assert with_overrides(cfg, seed=2).digest() != cfg.digest()


def test_sweep_requires_a_known_command():
    with pytest.raises(ConfigError):
        parse_config(_base(command="sweep"))
    with pytest.raises(ConfigError, match="cannot sweep"):
        parse_config(_base(command="sweep", sweep={"command": "sweep", "parameter": "mesh.N", "values": [5]}))
