"""
Run configurations, result documents and the command-line front end.
"""
import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from app import cli
from riskbounds.bounds import CERTIFIED_BY_ORACLE
from riskbounds.errors import ConfigParseError, ConfigValidationError
from riskbounds.run_config import parse_config, parse_sweep, run

EXPONENTIAL = {"family": "exponential", "params": {"scale": 1.0}}
SMALL_SEARCH = {"coarse_grid_resolution": 8, "lhs_samples": 400, "refine_rounds": 3}
SMALL_RA = {"m": 50, "restarts": 1}
UNIFORM = {"family": "uniform", "params": {"low": 0.0, "high": 1.0}}
POINT_MASS = {"family": "point_mass", "params": {"value": 1.0}}


def _share_config(**extra):
    config = {"command": "share", "total": {"values": list(range(1, 11))}, "betas": [0.1, 0.1]}
    config.update(extra)
    return config


def _marginal_config(command, marginals, **extra):
    config = {"command": command, "marginals": marginals, "search": SMALL_SEARCH}
    if command != "qdiff":
        config["ra"] = SMALL_RA
    config.update(extra)
    return config


def _ird_config(**extra):
    extra = {"r1": 0.0, "s1": 0.5, "r2": 0.5, "s2": 1.0, **extra}
    return _marginal_config("ird", [UNIFORM, UNIFORM], **extra)


def _qdiff_config(**extra):
    return _marginal_config("qdiff", [POINT_MASS, UNIFORM], **{"r": 0.3, "s": 0.6, **extra})


def _sharpness_config(command="sharpness", **extra):
    marginals = [POINT_MASS, {"family": "point_mass", "params": {"value": 2.0}}]
    return _marginal_config(command, marginals, **{"r": 0.2, "s": 0.5, "ra": {"m": 2}, **extra})


def _compare_config(**extra):
    return _marginal_config("compare", [EXPONENTIAL, EXPONENTIAL], **{"r": 0.2, **extra})


class TestParseConfig:
    def test_defaults_applied(self):
        text = json.dumps({"command": "bound", "marginals": [EXPONENTIAL, EXPONENTIAL], "r": 0.5, "s": 0.5})
        config = parse_config(text)
        assert config.direction == "sup"
        assert config.oracle is True
        for key in ("direction", "oracle", "tau_sharp", "search.seed", "ra.m", "output.format"):
            assert key in config.defaults_applied
        assert config.search_config().seed == 0

    def test_missing_field(self):
        text = json.dumps({"command": "bound", "marginals": [EXPONENTIAL], "r": 0.5})
        with pytest.raises(ConfigValidationError, match="s required"):
            parse_config(text)

    def test_beta_sum(self):
        with pytest.raises(ConfigValidationError, match=r"beta in \(0,1\)"):
            parse_config(json.dumps(_share_config(betas=[0.6, 0.5])))

    def test_malformed_json_reports_position(self):
        with pytest.raises(ConfigParseError) as info:
            parse_config('{"command": "bound",\n "r": }')
        assert info.value.details["line"] == 2
        assert info.value.details["column"] > 1

    def test_unknown_key(self):
        with pytest.raises(ConfigValidationError, match="unknown key 'alpha'"):
            parse_config(json.dumps(_share_config(alpha=0.1)))

    def test_wrong_type(self):
        text = json.dumps({"command": "bound", "marginals": [EXPONENTIAL], "r": "0.5", "s": 0.5})
        with pytest.raises(ConfigParseError) as info:
            parse_config(text)
        assert info.value.details["field"] == "r"

    def test_command_must_agree(self):
        with pytest.raises(ConfigValidationError):
            parse_config(json.dumps(_share_config()), command="bound")

    def test_window_checked_before_running(self):
        text = json.dumps({"command": "qdiff", "marginals": [EXPONENTIAL], "r": 0.6, "s": 0.4})
        with pytest.raises(ConfigValidationError):
            parse_config(text)

    def test_round_trip(self):
        config = parse_config(json.dumps(_share_config(t=12.0)))
        again = parse_config(json.dumps(config.to_dict()))
        assert again.to_dict() == config.to_dict()
        assert again.defaults_applied == ()

    def test_overrides(self):
        config = parse_config(json.dumps(_share_config()), overrides={"output": {"format": "csv"}, "t": None})
        assert config.output == {"path": None, "format": "csv"}
        assert config.t is None


class TestParseSweep:
    def test_inclusive_grid(self):
        assert parse_sweep("s=0.1:0.3:0.1") == [0.1, 0.2, 0.3]

    def test_malformed(self):
        with pytest.raises(ConfigParseError):
            parse_sweep("s=0.1:0.3")
        with pytest.raises(ConfigValidationError):
            parse_sweep("r=0.1:0.3:0.1")


class TestRun:
    def test_point_masses_certified(self, tmp_path):
        text = json.dumps({
            "command": "bound",
            "marginals": [{"family": "point_mass", "params": {"value": 1.0}},
                          {"family": "point_mass", "params": {"value": 2.0}}],
            "r": 0.2,
            "s": 0.5,
            "search": SMALL_SEARCH,
            "ra": {"m": 2},
        })
        code, document = run(parse_config(text), str(tmp_path))
        assert code == 0
        assert document["status"] == "ok"
        bound = document["results"]["bound"]
        assert bound["value"] == pytest.approx(3.0)
        assert bound["sharp"] == CERTIFIED_BY_ORACLE
        assert bound["oracle_gap"] == pytest.approx(0.0, abs=1e-12)
        assert document["seeds"] == {"search": 0, "ra": 0}

    def test_share(self, tmp_path):
        code, document = run(parse_config(json.dumps(_share_config())), str(tmp_path))
        assert code == 0
        results = document["results"]
        assert results["inf_convolution"] == pytest.approx(1.5)
        assert results["exposure"] == pytest.approx(1.5)
        assert results["gap"] == pytest.approx(0.0, abs=1e-12)
        assert results["dual_sup"] == pytest.approx(6.5)
        assert results["dependence"]["holds"] is True
        written = json.loads((tmp_path / "riskbounds_share.json").read_text())
        assert written["results"]["t"] == 11.0

    def test_share_exact_with_sequence(self, tmp_path):
        config = parse_config(json.dumps(_share_config(exact=True, m_param=10.0)))
        _, document = run(config, str(tmp_path))
        assert document["results"]["exact"]["inf_convolution"] == "3/2"
        assert document["results"]["sequence"]["a_m"] == 20.0
        assert document["results"]["sequence"]["error_term"] == 0.0

    def test_csv_tables(self, tmp_path):
        config = parse_config(json.dumps(_share_config(output={"format": "csv", "path": "shared.json"})))
        _, document = run(config, str(tmp_path))
        frame = pd.read_csv(tmp_path / "shared_allocation.csv")
        assert frame.shape == (10, 2)
        assert str(tmp_path / "shared_allocation.csv") in document["artifacts"]

    def test_result_document_reparses(self, tmp_path):
        _, document = run(parse_config(json.dumps(_share_config())), str(tmp_path))
        again = parse_config(json.dumps(document))
        assert again.to_dict() == document["config"]

    def test_computation_error(self, tmp_path):
        config = parse_config(json.dumps(_share_config(betas=[0.15, 0.1])))
        code, document = run(config, str(tmp_path))
        assert code == 2
        assert document["status"] == "error"
        assert document["code"] == "non_integral_mass"

    def test_ird_with_corner_oracle(self, tmp_path):
        config = parse_config(json.dumps(_ird_config(output={"format": "csv", "path": "ird.json"})))
        code, document = run(config, str(tmp_path))
        assert code == 0
        bound = document["results"]["ird"]
        assert bound["value"] == pytest.approx(1.0, abs=1e-6)
        oracle = document["results"]["oracle"]
        assert oracle["m"] == 50
        assert oracle["gap"] >= -1e-9
        assert oracle["value"] == pytest.approx(1.0, abs=2e-2)
        assert pd.read_csv(tmp_path / "ird_coupling.csv").shape == (50, 2)

    def test_ird_without_oracle(self, tmp_path):
        _, document = run(parse_config(json.dumps(_ird_config(oracle=False))), str(tmp_path))
        assert "oracle" not in document["results"]
        assert document["results"]["ird"]["value"] == pytest.approx(1.0, abs=1e-6)

    def test_qdiff(self, tmp_path):
        code, document = run(parse_config(json.dumps(_qdiff_config())), str(tmp_path))
        assert code == 0
        assert document["results"]["qdiff"]["value"] == pytest.approx(0.3, abs=1e-7)
        assert (tmp_path / "riskbounds_qdiff.json").exists()

    def test_sharpness(self, tmp_path):
        code, document = run(parse_config(json.dumps(_sharpness_config())), str(tmp_path))
        assert code == 0
        results = document["results"]
        assert results["formula"] == pytest.approx(3.0)
        assert results["oracle"] == pytest.approx(3.0)
        assert results["gap"] == pytest.approx(0.0, abs=1e-12)
        assert results["sharp"] == CERTIFIED_BY_ORACLE
        assert results["bound"]["value"] == results["formula"]

    def test_compare_sweep(self, tmp_path):
        code, document = run(parse_config(json.dumps(_compare_config(sweep="s=0.2:0.4:0.2"))), str(tmp_path))
        assert code == 0
        rows = document["results"]["rows"]
        assert [row["s"] for row in rows] == [0.2, 0.4]
        for row in rows:
            assert row["oracle_sup"] <= min(row["new_upper"], row["bllw_upper"]) + 5e-3
            assert row["oracle_inf"] >= max(row["new_lower"], row["bllw_lower"]) - 5e-3
        frame = pd.read_csv(tmp_path / "riskbounds_compare_compare.csv")
        assert list(frame.columns) == [
            "r", "s", "new_upper", "bllw_upper", "oracle_sup", "new_lower", "bllw_lower", "oracle_inf"
        ]
        assert len(frame) == 2

    def test_compare_sweep_outside_window(self, tmp_path):
        config = parse_config(json.dumps(_compare_config(r=0.9, sweep="s=0.2:0.4:0.2")))
        code, document = run(config, str(tmp_path))
        assert code == 1
        assert document["status"] == "error"


class TestCli:
    def _write(self, tmp_path, config):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config))
        return str(path)

    def test_share_command(self, tmp_path):
        path = self._write(tmp_path, _share_config())
        result = CliRunner().invoke(cli, ["--output-dir", str(tmp_path), "share", "--config", path], obj={})
        assert result.exit_code == 0
        document = json.loads((tmp_path / "riskbounds_share.json").read_text())
        assert document["results"]["inf_convolution"] == pytest.approx(1.5)

    def test_format_option(self, tmp_path):
        path = self._write(tmp_path, _share_config())
        args = ["--output-dir", str(tmp_path), "share", "--config", path, "--format", "csv"]
        result = CliRunner().invoke(cli, args, obj={})
        assert result.exit_code == 0
        assert (tmp_path / "riskbounds_share_allocation.csv").exists()

    def test_invalid_config_exits_with_one(self, tmp_path):
        path = self._write(tmp_path, _share_config(betas=[0.6, 0.5]))
        result = CliRunner().invoke(cli, ["--output-dir", str(tmp_path), "share", "--config", path], obj={})
        assert result.exit_code == 1
        assert not (tmp_path / "riskbounds_share.json").exists()

    def test_command_mismatch(self, tmp_path):
        path = self._write(tmp_path, _share_config())
        result = CliRunner().invoke(cli, ["--output-dir", str(tmp_path), "bound", "--config", path], obj={})
        assert result.exit_code == 1

    @pytest.mark.parametrize(
        "command, config, key",
        [
            ("ird", _ird_config(oracle=False), "ird"),
            ("qdiff", _qdiff_config(), "qdiff"),
            ("sharpness", _sharpness_config(), "sharp"),
        ],
    )
    def test_marginal_commands(self, tmp_path, command, config, key):
        path = self._write(tmp_path, config)
        result = CliRunner().invoke(cli, ["--output-dir", str(tmp_path), command, "--config", path], obj={})
        assert result.exit_code == 0
        document = json.loads((tmp_path / f"riskbounds_{command}.json").read_text())
        assert document["command"] == command
        assert key in document["results"]

    def test_bound_command(self, tmp_path):
        path = self._write(tmp_path, _sharpness_config(command="bound"))
        args = ["--output-dir", str(tmp_path), "bound", "--config", path, "--output", "bounds/run.json"]
        result = CliRunner().invoke(cli, args, obj={})
        assert result.exit_code == 0
        document = json.loads((tmp_path / "bounds" / "run.json").read_text())
        assert document["results"]["bound"]["value"] == pytest.approx(3.0)

    def test_compare_sweep_and_jobs(self, tmp_path):
        path = self._write(tmp_path, _compare_config(s=0.5))
        args = ["--output-dir", str(tmp_path), "compare", "--config", path, "--sweep", "s=0.2:0.6:0.2", "--jobs", "2"]
        result = CliRunner().invoke(cli, args, obj={})
        assert result.exit_code == 0
        frame = pd.read_csv(tmp_path / "riskbounds_compare_compare.csv")
        np.testing.assert_allclose(frame["s"], [0.2, 0.4, 0.6])
        document = json.loads((tmp_path / "riskbounds_compare.json").read_text())
        assert document["config"]["sweep"] == "s=0.2:0.6:0.2"
        assert document["config"]["jobs"] == 2

    def test_computation_error_exits_with_two(self, tmp_path):
        path = self._write(tmp_path, _share_config(betas=[0.15, 0.1]))
        result = CliRunner().invoke(cli, ["--output-dir", str(tmp_path), "share", "--config", path], obj={})
        assert result.exit_code == 2
        assert json.loads((tmp_path / "riskbounds_share.json").read_text())["code"] == "non_integral_mass"
