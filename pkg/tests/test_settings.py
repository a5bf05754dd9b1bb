# tests/test_settings.py
import ast
import json
import pathlib

import pytest

from config.settings import (
    BenchConfig,
    SolverConfig,
    config_from_dict,
    config_to_dict,
    dump_config,
    load_config,
    with_overrides,
)
from services.energy import EnergyWeights
from services.errors import ConfigError


def test_defaults():
    cfg = load_config(None)
    assert cfg == BenchConfig()
    assert cfg.canvas == (64, 64)
    assert cfg.n_gt == 24
    assert cfg.solver.n_subframes == 8
    assert cfg.solver.weights == EnergyWeights(1.0, 5.0, 1.0, 1.0)
    assert cfg.eval_l == 8 and cfg.eval_epsilon == 1.0


def test_partial_file_keeps_other_defaults(tmp_path):
    path = tmp_path / "bench.json"
    path.write_text(json.dumps({"version": 1, "sample_count": 3, "solver": {"max_iters": 40, "weights": {"alpha_T": 2.0}}}))
    cfg = load_config(str(path))
    assert cfg.sample_count == 3
    assert cfg.solver.max_iters == 40
    assert cfg.solver.weights.alpha_T == 2.0
    assert cfg.solver.weights.alpha_I == 1.0
    assert cfg.jobs == 1


def test_dump_and_load_round_trip(tmp_path):
    cfg = BenchConfig(canvas=(48, 40), seed=9, solver=SolverConfig(step=0.1, shift_refresh=3))
    path = str(tmp_path / "out" / "cfg.json")
    text = dump_config(cfg, path)
    assert load_config(path) == cfg
    assert config_from_dict(json.loads(text)) == cfg
    assert config_to_dict(cfg)["canvas"] == [48, 40]


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError, match="unknown config key 'colour'"):
        config_from_dict({"version": 1, "colour": "red"})
    with pytest.raises(ConfigError, match="solver.weights."):
        config_from_dict({"version": 1, "solver": {"weights": {"alpha_X": 1.0}}})


def test_version_and_value_errors(tmp_path):
    with pytest.raises(ConfigError, match="version"):
        config_from_dict({"sample_count": 2})
    with pytest.raises(ConfigError):
        config_from_dict({"version": 1, "jobs": 0})
    with pytest.raises(ConfigError):
        config_from_dict({"version": 1, "solver": {"weights": {"alpha_S": -1.0}}})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(str(bad))
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))


def test_overrides_ignore_none_and_propagate_the_seed():
    cfg = with_overrides(BenchConfig(), seed=None, jobs=None)
    assert cfg == BenchConfig()
    cfg = with_overrides(BenchConfig(), seed=17, jobs=4)
    assert cfg.seed == 17 and cfg.jobs == 4
    assert cfg.solver.seed == 17


@pytest.mark.parametrize("package", ["config", "services"])
def test_lower_layers_never_import_agents(package):
    """Test that config and services modules depend on nothing under agents."""
    root = pathlib.Path(__file__).resolve().parent.parent / package
    offenders = []
    for path in sorted(root.glob("*.py")):
        for node in ast.walk(ast.parse(path.read_text())):
            if isinstance(node, ast.ImportFrom) and node.module:
                names = [node.module]
            elif isinstance(node, ast.Import):
                names = [alias.name for alias in node.names]
            else:
                continue
            offenders += [f"{path.name}: {name}" for name in names if name.split(".")[0] == "agents"]
    assert offenders == []
