import json
import logging
from pathlib import Path

import numpy as np
import pytest

from src.config import parse_run_config
from src.main import main
from src.services.artifacts import MANIFEST, RunArtifacts, dumps
from src.services.commands import EXIT_ABORT, EXIT_FAILED, EXIT_OK, EXIT_USAGE, commands
from src.services.logging_config import JSONFormatter, get_logger
from src.services.selftest import KNOBS, oracles, run_selftest

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL_RUN = """
[model]
family = "quadratic"
dim = 2
params = { gamma_E = 3.5, gamma_v = 0.5 }

[grid]
n_cells = 32

[time]
t_end = 0.05
snapshot_stride = 4

[init]
kind = "sine"
amplitude = 0.02
velocity_amplitude = 0.05
"""


@pytest.fixture
def small_toml(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL_RUN)
    return path


class TestSelftest:
    def test_all_oracles_pass(self):
        report = run_selftest()
        assert report.passed, report.to_dict()["first_failure"]
        assert len(report.results) == len(oracles.names)

    def test_perturbed_constant_is_detected(self):
        report = run_selftest({"quadratic.gamma_E": 4.0})
        assert not report.passed
        assert report.to_dict()["first_failure"].startswith("entropy:")

    def test_gas_knob(self):
        report = run_selftest({"gas.a": 1.01})
        failed = {r.name for r in report.results if not r.passed}
        assert "gas-G" in failed

    def test_unknown_knob(self):
        with pytest.raises(KeyError):
            run_selftest({"quadratic.gamma_X": 2.0})
        assert "quadratic.gamma_X" not in KNOBS

    def test_main_selftest(self, capsys):
        assert main(["selftest"]) == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["passed"] is True
        assert payload["first_failure"] is None


class TestCommands:
    async def test_unknown_command(self):
        result = await commands.handle("frobnicate")
        assert result.exit_code == EXIT_USAGE
        assert "selftest" in result.message

    async def test_selftest_rejects_unknown_knob(self):
        result = await commands.handle("selftest", perturb={"bogus": 1.0})
        assert result.exit_code == EXIT_USAGE

    async def test_failed_selftest_exit_code(self):
        result = await commands.handle("selftest", perturb={"quadratic.gamma_v": 1.5})
        assert result.exit_code == EXIT_FAILED
        assert result.message.startswith("selftest failed")

    def test_registered_names(self):
        assert {"check-model", "simulate", "converge", "selftest", "gas-check", "gas-crosscheck"} <= set(commands.names)


class TestMain:
    def test_argparse_usage_error(self):
        assert main(["no-such-command"]) == EXIT_USAGE

    def test_missing_command(self):
        assert main([]) == EXIT_USAGE

    def test_converge_needs_three_eps(self, tmp_path):
        assert main(["converge", "--eps", "0.1", "--out", str(tmp_path / "c")]) == EXIT_USAGE

    def test_missing_config_file(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "none.toml")]) == EXIT_USAGE

    def test_check_model(self, tmp_path, capsys):
        out = tmp_path / "check"
        code = main(["check-model", "--config", str(CONFIGS / "quadratic.toml"), "--out", str(out)])
        payload = json.loads(capsys.readouterr().out)
        assert code == EXIT_OK
        assert payload["passed"] is True
        assert payload["reports"]["psi_convexity"]["delta_bound"] > 0
        manifest = json.loads((out / MANIFEST).read_text())
        assert manifest["status"] == "completed"
        assert (out / "certificate.json").exists()

    def test_simulate_is_reproducible(self, tmp_path, small_toml, capsys):
        for name in ("a", "b"):
            assert main(["simulate", "--config", str(small_toml), "--out", str(tmp_path / name), "--seed", "7"]) == EXIT_OK
        capsys.readouterr()
        for csv_name in ("diagnostics.csv", "snapshot_0000.csv", "snapshot_0001.csv"):
            assert (tmp_path / "a" / csv_name).read_bytes() == (tmp_path / "b" / csv_name).read_bytes()
        manifest = json.loads((tmp_path / "a" / MANIFEST).read_text())
        assert manifest["seed"] == 7
        assert manifest["status"] == "completed"

    def test_simulate_abort(self, tmp_path):
        path = tmp_path / "abort.toml"
        path.write_text(SMALL_RUN + "\n[numerics]\nw_min = 1.5\n")
        out = tmp_path / "abort"
        assert main(["simulate", "--config", str(path), "--out", str(out)]) == EXIT_ABORT
        manifest = json.loads((out / MANIFEST).read_text())
        assert manifest["status"] == "aborted"
        assert manifest["abort_reason"].startswith("DeterminantFloorError")


class TestArtifacts:
    def test_manifest_is_written_first(self, out_dir):
        artifacts = RunArtifacts(out_dir, "simulate", parse_run_config({}), seed=3)
        artifacts.start()
        assert [p.name for p in out_dir.iterdir()] == [MANIFEST]
        assert json.loads((out_dir / MANIFEST).read_text())["status"] == "running"
        artifacts.finish("completed", n_steps=12)
        manifest = json.loads((out_dir / MANIFEST).read_text())
        assert manifest["n_steps"] == 12
        assert manifest["config_hash"].startswith(artifacts.run_id)

    def test_csv_cells(self, out_dir):
        artifacts = RunArtifacts(out_dir, "simulate")
        artifacts.start()
        path = artifacts.write_csv("rows.csv", [{"eps": 0.1, "ok": True, "status": "ok"}, {"eps": 0.05, "ok": False}])
        assert path.read_text() == "eps,ok,status\n0.1,true,ok\n0.05,false,\n"

    def test_dumps_numpy_values(self):
        text = dumps({"a": np.float64(0.5), "b": np.arange(2), "c": np.bool_(True)})
        assert json.loads(text) == {"a": 0.5, "b": [0, 1], "c": True}


class TestLogging:
    def test_json_formatter_carries_context(self):
        record = logging.LogRecord("polyrelax.test", logging.INFO, __file__, 1, "step done", None, None)
        record.epsilon = 0.05
        record.run_id = "abc123"
        data = json.loads(JSONFormatter().format(record))
        assert data["message"] == "step done"
        assert data["level"] == "INFO"
        assert data["epsilon"] == 0.05
        assert data["run_id"] == "abc123"
        assert "step" not in data

    def test_context_adapter(self, caplog):
        log = get_logger("polyrelax.test", run_id="r1", epsilon=0.1)
        with caplog.at_level(logging.INFO, logger="polyrelax.test"):
            log.info("hello")
        assert caplog.records[-1].run_id == "r1"
        assert caplog.records[-1].epsilon == 0.1
