import warnings
from pathlib import Path

import pytest

from src.config import RunConfig, Settings, load_run_config, parse_run_config
from src.services.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_defaults():
    config = RunConfig()
    assert config.grid.n_cells == 128
    assert config.relax.epsilon == 0.05
    assert config.numerics.system == "relax"
    assert config.output.formats == ["csv", "json"]


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.toml")), ids=lambda p: p.name)
def test_shipped_configs_load(path):
    config = load_run_config(path)
    assert config.time.t_end > 0


@pytest.mark.parametrize(
    "data, field",
    [
        ({"relax": {"eps_list": [0.1, 0.2]}}, "relax.eps_list"),
        ({"relax": {"eps_list": [0.1, -0.05]}}, "relax.eps_list"),
        ({"grid": {"n_cells": 4}}, "grid.n_cells"),
        ({"grid": {"cells": 64}}, "grid.cells"),
        ({"model": {"box_lower": [0.0]}}, "model"),
        ({"gas": {"rho_box": [2.0, 1.0]}}, "gas.rho_box"),
        ({"numerics": {"system": "implicit"}}, "numerics.system"),
    ],
)
def test_invalid_tables(data, field):
    with pytest.raises(ConfigError) as info:
        parse_run_config(data, source="case.toml")
    message = str(info.value)
    assert message.startswith("case.toml: invalid configuration")
    assert field in message


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="no such config file"):
        load_run_config(tmp_path / "absent.toml")


def test_toml_syntax_error(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[grid\nn_cells = 32\n")
    with pytest.raises(ConfigError, match="TOML syntax error"):
        load_run_config(path)


def test_with_overrides_validates_and_copies():
    config = RunConfig()
    updated = config.with_overrides(relax={"epsilon": 0.1}, grid={"n_cells": 64})
    assert updated.relax.epsilon == 0.1
    assert updated.grid.n_cells == 64
    assert config.relax.epsilon == 0.05
    with pytest.raises(ConfigError):
        config.with_overrides(time={"cfl": 2.0})


def test_content_hash():
    a = parse_run_config({"relax": {"epsilon": 0.05}})
    b = RunConfig()
    assert a.content_hash() == b.content_hash()
    assert len(a.content_hash()) == 40
    assert a.with_overrides(relax={"epsilon": 0.04}).content_hash() != a.content_hash()


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("THREADS", "3")
    monkeypatch.setenv("LOG_JSON", "true")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        settings = Settings()
    assert settings.THREADS == 3
    assert settings.LOG_JSON is True
    assert settings.model_config["env_file"] == ".env"
