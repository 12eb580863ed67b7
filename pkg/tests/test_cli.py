import math
import subprocess
import sys

import numpy as np
import pytest

from stackelberg_ppo import cli, surrogates
from stackelberg_ppo.config import (
    apply_overrides,
    config_from_dict,
    config_to_dict,
    dump_config,
    load_config,
    parse_override,
)
from stackelberg_ppo.errors import ConfigError
from stackelberg_ppo.trainer import TrainConfig

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


def test_parse_override_values():
    assert parse_override("epochs=5") == (["epochs"], 5)
    assert parse_override("env_params.seed = 3") == (["env_params", "seed"], 3)
    assert parse_override("mode=vanilla") == (["mode"], "vanilla")
    assert parse_override("ppo_clip_eps=0.1") == (["ppo_clip_eps"], 0.1)
    for bad in ("epochs", "=3"):
        with pytest.raises(ConfigError):
            parse_override(bad)


def test_apply_overrides_does_not_mutate():
    base = {"env_params": {"seed": 1}, "epochs": 3}
    out = apply_overrides(base, ["env_params.seed=2", "epochs=4"])
    assert out == {"env_params": {"seed": 2}, "epochs": 4}
    assert base == {"env_params": {"seed": 1}, "epochs": 3}
    with pytest.raises(ConfigError):
        apply_overrides(base, ["epochs.x=1"])


def test_special_tokens():
    cfg = config_from_dict({"fisher_lambda": "inf", "ppo_clip_eps": "none"})
    assert math.isinf(cfg.fisher_lambda) and cfg.ppo_clip_eps is None
    assert cfg.effective_mode == "vanilla"


@pytest.mark.parametrize("data", [{"epoch": 3}, {"epochs": "many"}, {"normalize_advantages": 1},
                                  {"gamma": 2.0}, {"mode": "newton"}])
def test_bad_config_rejected(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


@pytest.mark.parametrize("cfg", [TrainConfig(), TrainConfig(fisher_lambda=math.inf, ppo_clip_eps=None),
                                 TrainConfig(env="chainwalker", leader_horizon=3, env_params={"dt": 0.1})])
def test_config_round_trip(cfg):
    assert config_from_dict(tomllib.loads(dump_config(cfg, {"command": "x"}))) == cfg
    assert config_from_dict(config_to_dict(cfg)) == cfg


def test_shipped_configs_load(config_dir):
    for path in sorted(config_dir.glob("*.toml")):
        load_config(path)


def test_unknown_key_exits_2(config_dir, tmp_path, capsys):
    code = cli.main(["train", "--config", str(config_dir / "tabular.toml"), "--set", "epoch=3",
                     "--output-dir", str(tmp_path)])
    assert code == cli.EXIT_CONFIG
    assert "epoch" in capsys.readouterr().err
    assert cli.main(["train", "--config", str(tmp_path / "missing.toml")]) == cli.EXIT_CONFIG


def test_zero_epochs_writes_header_only(config_dir, tmp_path):
    assert cli.cmd_train(config_dir / "tabular.toml", ["epochs=0"], tmp_path) == cli.EXIT_OK
    assert (tmp_path / "metrics.csv").read_text() == cli.METRICS_HEADER + "\n"
    assert (tmp_path / cli.MANIFEST_NAME).exists()


def test_metrics_schema(config_dir, tmp_path):
    assert cli.METRICS_HEADER == ("epoch,env_steps,leader_return,follower_return,kl,clip_frac,cg_iters,"
                                  "cg_converged,alpha,wall_ms")
    assert cli.cmd_train(config_dir / "tabular.toml", ["epochs=3", "batch_trajectories=8"], tmp_path) == 0
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert len(lines) == 4
    rows = np.array([[float(x) for x in line.split(",")] for line in lines[1:]])
    np.testing.assert_array_equal(rows[:, 0], [0, 1, 2])
    assert np.all(np.diff(rows[:, 1]) > 0) and np.all(np.isfinite(rows))
    manifest = tomllib.loads((tmp_path / cli.MANIFEST_NAME).read_text())
    assert manifest["epochs"] == 3 and manifest["run"]["command"] == "train"
    assert (tmp_path / "timing.csv").read_text().count("\n") == 4


def test_output_dir_env_var_and_flag(config_dir, tmp_path, monkeypatch):
    env_dir, flag_dir = tmp_path / "env", tmp_path / "flag"
    monkeypatch.setenv(cli.OUTPUT_ENV_VAR, str(env_dir))
    assert cli.main(["train", "--config", str(config_dir / "tabular.toml"), "--set", "epochs=0"]) == 0
    assert (env_dir / "metrics.csv").exists()
    assert cli.main(["train", "--config", str(config_dir / "tabular.toml"), "--set", "epochs=0",
                     "--output-dir", str(flag_dir)]) == 0
    assert (flag_dir / "metrics.csv").exists()
    monkeypatch.delenv(cli.OUTPUT_ENV_VAR)
    assert cli.resolve_output_dir(None).name == cli.DEFAULT_OUTPUT_DIR


def test_parse_lambdas():
    assert cli.parse_lambdas("0,0.5, 5,inf") == [0.0, 0.5, 5.0, math.inf]
    for bad in ("a", "-1", "", "nan"):
        with pytest.raises(ConfigError):
            cli.parse_lambdas(bad)


def test_sweep_writes_rows(config_dir, tmp_path):
    code = cli.main(["sweep", "--config", str(config_dir / "tabular.toml"), "--lambdas", "0.5,inf",
                     "--seeds", "1", "--set", "epochs=2", "--set", "batch_trajectories=8",
                     "--output-dir", str(tmp_path)])
    assert code == 0
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == cli.SWEEP_HEADER
    assert [line.split(",")[:2] for line in lines[1:]] == [["0.5", "0"], ["inf", "0"]]
    assert cli.main(["sweep", "--config", str(config_dir / "tabular.toml"), "--lambdas", "x",
                     "--output-dir", str(tmp_path)]) == cli.EXIT_CONFIG


def test_verify_fast_passes():
    assert cli.main(["verify", "--level", "fast"]) == 0


def test_verify_detects_sign_flipped_cross_term(monkeypatch, capsys):
    real = surrogates.cross_jvp
    monkeypatch.setattr(surrogates, "cross_jvp", lambda *a, **k: -real(*a, **k))
    assert cli.main(["verify", "--level", "fast"]) == cli.EXIT_CHECK_FAILED
    assert "FAIL" in capsys.readouterr().out


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "stackelberg_ppo", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "train" in out.stdout and "sweep" in out.stdout
