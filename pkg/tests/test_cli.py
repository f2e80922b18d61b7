import copy
import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from hyperdrift.cli import COMMANDS, REPORT_HEADER, format_value, main, parse_config, parse_value, read_csv, write_csv
from hyperdrift.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

# Small experiment blocks so every command finishes in a few seconds.
EXPERIMENTS = {
    "constants": {},
    "simulate": {"x0": [0.0, 0.1], "record_every": 50, "flow": True},
    "decay": {"times": [0.005, 0.01, 0.02], "lambda_factor": 2.0},
    "localtime": {"times": [0.1, 0.2], "orders": [1, 2], "exp_t0_multiples": [1]},
    "flow": {"t": 0.2, "steps": [0.1, 0.01], "gateaux_t": 0.1, "gateaux_paths": 50},
    "stationary": {"depths": [0.01, 0.02], "realizations": 40, "lambda_factor": 2.0, "coupling_paths": 40,
                   "ks_realizations": 100, "moment_times": [0.01]},
    "validate": {"n_samples": 500},
}


def base_config(name="bangbang"):
    return json.loads((CONFIGS / f"{name}.json").read_text())


def write_config(tmp_path, command, name="bangbang", **numerics):
    doc = base_config(name)
    doc["experiment"] = copy.deepcopy(EXPERIMENTS[command])
    doc["numerics"].update({"n_paths": 60, "t_end": 0.1})
    if command in ("decay", "stationary"):
        doc["numerics"]["dt"] = 1e-4
    doc["numerics"].update(numerics)
    path = tmp_path / f"{command}-{name}.json"
    path.write_text(json.dumps(doc))
    return path


def run(tmp_path, command, config, out, *extra):
    return main([command, "--config", str(config), "--out", str(tmp_path / out), "--quiet", *extra])


def digests(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(Path(directory).iterdir())}


def read_kv(path):
    return {k: parse_value(v) for k, v in (line.split("=", 1) for line in Path(path).read_text().splitlines())}


class TestConfig:
    def test_shipped_configs_parse(self):
        for name in ("ou", "bangbang", "smooth"):
            for command in COMMANDS:
                parse_config(base_config(name), command)

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda d: d.update(extra=1),
            lambda d: d["model"].update(colour="red"),
            lambda d: d["model"]["declared"].pop("B_sigma"),
            lambda d: d["numerics"].update(dt=0.0),
            lambda d: d["numerics"].update(eps=-1.0),
            lambda d: d["numerics"].update(n_paths=1),
            lambda d: d["experiment"].update(depth=3),
            lambda d: d["output"].update(formats=["parquet"]),
        ],
    )
    def test_invalid(self, mutate):
        doc = base_config()
        mutate(doc)
        with pytest.raises(ConfigError):
            parse_config(doc, "decay")

    def test_experiment_keys_are_per_command(self):
        doc = base_config()
        doc["experiment"] = {"depths": [1, 2]}
        parse_config(doc, "stationary")
        with pytest.raises(ConfigError):
            parse_config(doc, "decay")


class TestCommands:
    def test_constants_ou(self, tmp_path):
        assert run(tmp_path, "constants", write_config(tmp_path, "constants", "ou"), "o") == 0
        kv = read_kv(tmp_path / "o" / "constants.txt")
        assert kv["Lambda"] == 0.5
        assert kv["C1"] == pytest.approx(math.sqrt(2))
        assert kv["threshold_met"] is True

    def test_constants_bang_bang_below_threshold(self, tmp_path):
        assert run(tmp_path, "constants", write_config(tmp_path, "constants"), "o") == 0
        kv = read_kv(tmp_path / "o" / "constants.txt")
        assert kv["Lambda"] == pytest.approx(oracles.BANGBANG_LAMBDA, rel=1e-9)
        assert kv["threshold_met"] is False and "C2" not in kv

    def test_decay_below_threshold(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "decay")
        doc = json.loads(cfg.read_text())
        del doc["experiment"]["lambda_factor"]
        cfg.write_text(json.dumps(doc))
        assert run(tmp_path, "decay", cfg, "o") == 3
        assert "Lambda=166.5" in capsys.readouterr().err

    def test_parse_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run(tmp_path, "constants", bad, "o") == 2
        assert run(tmp_path, "constants", tmp_path / "missing.json", "o") == 2

    def test_invalid_config(self, tmp_path):
        doc = base_config()
        doc["numerics"]["mystery"] = 1
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(doc))
        assert run(tmp_path, "constants", cfg, "o") == 3

    def test_failed_check_exit(self, tmp_path):
        doc = base_config()
        doc["model"]["declared"]["norm_alpha_inf"] = 0.4
        doc["experiment"] = {"n_samples": 500}
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(doc))
        assert run(tmp_path, "validate", cfg, "o") == 1
        rows = read_csv(tmp_path / "o" / "validation.csv")
        assert [r["quantity"] for r in rows if not r["pass"]] == ["norm_alpha_inf"]

    @pytest.mark.parametrize("command", COMMANDS)
    def test_runs_and_writes_manifest(self, tmp_path, command):
        cfg = write_config(tmp_path, command)
        code = run(tmp_path, command, cfg, "o")
        assert code == 0
        manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert manifest["command"] == command
        assert manifest["master_seed"] == 2024
        files = digests(tmp_path / "o")
        for name, digest in manifest["files"].items():
            assert files[name] == digest

    def test_report_rows_round_trip(self, tmp_path):
        assert run(tmp_path, "localtime", write_config(tmp_path, "localtime"), "o") == 0
        text = (tmp_path / "o" / "localtime.csv").read_text()
        assert text.splitlines()[0] == ",".join(REPORT_HEADER)
        rows = read_csv(tmp_path / "o" / "localtime.csv")
        assert all(isinstance(r["pass"], bool) and isinstance(r["estimate"], float) for r in rows)
        copy_path = tmp_path / "copy.csv"
        write_csv(copy_path, REPORT_HEADER, rows)
        assert copy_path.read_text() == text


class TestSeeds:
    def test_precedence(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path, "simulate")
        run(tmp_path, "simulate", cfg, "config")
        monkeypatch.setenv("HYPERDRIFT_SEED", "77")
        run(tmp_path, "simulate", cfg, "env")
        run(tmp_path, "simulate", cfg, "flag", "--seed", "77")
        run(tmp_path, "simulate", cfg, "both", "--seed", "2024")
        seed = {d: json.loads((tmp_path / d / "manifest.json").read_text())["master_seed"] for d in ("config", "env", "flag", "both")}
        assert seed == {"config": 2024, "env": 77, "flag": 77, "both": 2024}
        assert digests(tmp_path / "env") == digests(tmp_path / "flag")
        assert digests(tmp_path / "config") == digests(tmp_path / "both")
        assert digests(tmp_path / "config")["paths.csv"] != digests(tmp_path / "env")["paths.csv"]


@pytest.mark.parametrize("command", COMMANDS)
def test_rerun_is_byte_identical(tmp_path, command):
    cfg = write_config(tmp_path, command, n_paths=2100)  # more than one path chunk
    run(tmp_path, command, cfg, "a")
    run(tmp_path, command, cfg, "b")
    run(tmp_path, command, cfg, "c", "--workers", "3")
    assert digests(tmp_path / "a") == digests(tmp_path / "b") == digests(tmp_path / "c")


@settings(max_examples=300, deadline=None)
@given(st.one_of(st.floats(allow_nan=False), st.integers(-10**12, 10**12), st.booleans(), st.text(alphabet="abcxyz_", min_size=1)))
def test_value_round_trip(v):
    back = parse_value(format_value(v))
    assert back == v and type(back) is type(v)


def test_nan_round_trip():
    assert math.isnan(parse_value(format_value(float("nan"))))
    assert parse_value(format_value(np.float64(0.1))) == 0.1
