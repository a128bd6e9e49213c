import json

import pytest

from nlsgraph.config import ConfigError, RunConfig


def test_defaults_are_valid():
    cfg = RunConfig.load(env={})
    assert cfg.p == 8.0 and cfg.Ns() == [2, 3, 4]
    assert cfg.rho_grid()[0] == 0.5 and cfg.rho_grid()[-1] == 1.0 and len(cfg.rho_grid()) == 11


def test_priority_file_env_flags(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"p": 10, "mu": 2.0, "N": 5}))
    cfg = RunConfig.load(f, env={"NLSGRAPH_MU": "3.5", "NLSGRAPH_N": "6"}, overrides={"N": 3, "seed": None})
    assert cfg.p == 10 and cfg.mu == 3.5 and cfg.N == 3 and cfg.seed == 0


@pytest.mark.parametrize("bad", [{"p": 2.0}, {"mu": 0.0}, {"h": -1.0}, {"truncation": 0.0}, {"N": 1}, {"rho_steps": 0}])
def test_invalid_values(bad):
    with pytest.raises(ConfigError):
        RunConfig.load(env={}, overrides=bad)


def test_supercritical_gate():
    cfg = RunConfig.load(env={}, overrides={"p": 4.0})
    with pytest.raises(ConfigError, match="requires p > 6"):
        cfg.validate(supercritical=True)


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        RunConfig.load(tmp_path / "missing.json", env={})
    (tmp_path / "x.json").write_text(json.dumps({"colour": "red"}))
    with pytest.raises(ConfigError, match="unknown keys"):
        RunConfig.load(tmp_path / "x.json", env={})
    with pytest.raises(ConfigError, match="NLSGRAPH_P"):
        RunConfig.load(env={"NLSGRAPH_P": "eight"})


def test_graph_building(tmp_path):
    cfg = RunConfig.load(env={}, overrides={"loop": 2.0, "truncation": 12.0})
    g = cfg.build_graph()
    assert g.edge("loop").length == 2.0 and g.edge("tail").length == 12.0
    cfg.graph = str(tmp_path / "none.json")
    with pytest.raises(FileNotFoundError):
        cfg.build_graph()
