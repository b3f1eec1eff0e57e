"""Config parsing totality and the CLI subcommands end to end."""

import json
import os

import numpy as np
import pytest
import yaml

from cssl.cli import cli_main
from cssl.config import DEFAULT_CONFIG_YAML, load_config, parse_config
from cssl.errors import ConfigError

FAST_CONFIG = """\
scenario: class_il
num_tasks: 2
seeds: [1]
dataset: {classes: 4, input_dim: 8, samples_per_class: 12, radius: 1.0, sigma: 0.8}
model:
  encoder_dims: [8, 10, 6]
  projector_dims: [6, 6]
  predictor_dims: [6, 6]
augment: {noise_std: 0.3, dropout_p: 0.1, scale_range: [0.8, 1.2]}
train: {epochs_per_task: 2, batch_size: 16, lr: 0.05}
loss: {method: simclr, regime: pnr}
probe: {epochs: 120, lr: 0.5, l2_penalty: 1.0e-4, train_fraction: 0.8}
"""


class TestConfigParsing:
    def test_default_yaml_parses(self):
        cfg = parse_config(yaml.safe_load(DEFAULT_CONFIG_YAML))
        assert cfg.num_tasks == 5
        assert cfg.train.loss.tau == 0.2
        assert cfg.train.queue_capacity == 1024

    def test_empty_config_gets_defaults(self):
        cfg = parse_config({})
        assert cfg.scenario == "class_il"
        assert cfg.train.epochs_per_task == 100

    @pytest.mark.parametrize("patch,field", [
        ({"scenario": "bogus"}, "scenario"),
        ({"num_tasks": 0}, "num_tasks"),
        ({"num_tasks": 3}, "num_tasks"),  # 10 classes not divisible by 3
        ({"seeds": []}, "seeds"),
        ({"seeds": "one"}, "seeds"),
        ({"dataset": {"classes": 1}}, "classes"),
        ({"dataset": {"sigma": -1.0}}, "sigma"),
        ({"model": {"encoder_dims": [16, 8]}}, "encoder_dims"),
        ({"model": {"projector_dims": [8]}}, "projector_dims"),
        ({"augment": {"dropout_p": 2.0}}, "augment"),
        ({"train": {"lr": "fast"}}, "lr"),
        ({"train": {"epochs_per_task": -5}}, "train"),
        ({"loss": {"method": "dino"}}, "loss"),
        ({"loss": {"tau": 0.0}}, "tau"),
        ({"probe": {"train_fraction": 1.5}}, "probe"),
        ({"typo_section": {}}, "typo_section"),
        ({"loss": {"lambda_cassle": -3.0}}, "loss"),
    ])
    def test_invalid_fields_named(self, patch, field):
        raw = yaml.safe_load(DEFAULT_CONFIG_YAML)
        for key, value in patch.items():
            if isinstance(value, dict):
                raw[key] = {**raw.get(key, {}), **value}
            else:
                raw[key] = value
        with pytest.raises(ConfigError) as err:
            parse_config(raw)
        assert field in str(err.value)

    def test_lambda_default_resolution(self):
        raw = yaml.safe_load(DEFAULT_CONFIG_YAML)
        raw["loss"]["method"] = "vicreg"
        raw["loss"]["lambda_pnr"] = None
        cfg = parse_config(raw)
        assert cfg.train.loss.lambda_pnr == 23.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "nope.yaml"))


class TestCli:
    @pytest.fixture()
    def workdir(self, tmp_path):
        cfg_path = tmp_path / "cfg.yaml"
        cfg_path.write_text(FAST_CONFIG)
        return tmp_path, str(cfg_path)

    def test_gen_train_probe_pipeline(self, workdir, capsys):
        tmp, cfg = workdir
        data = str(tmp / "data.bin")
        out_dir = str(tmp / "run")
        assert cli_main(["gen-data", "--config", cfg, "--out", data]) == 0
        assert cli_main(["train", "--config", cfg, "--data", data,
                         "--out-dir", out_dir]) == 0
        assert os.path.exists(os.path.join(out_dir, "seed1_seq_task2.ckpt"))
        assert os.path.exists(os.path.join(out_dir, "train_log.json"))
        prefix = str(tmp / "metrics")
        assert cli_main(["probe", "--config", cfg, "--data", data,
                         "--checkpoints", out_dir, "--out", prefix]) == 0
        csv_path = f"{prefix}_seed1.csv"
        json_path = f"{prefix}_seed1.json"
        assert os.path.exists(csv_path)
        with open(json_path) as fh:
            metrics = json.load(fh)
        assert "A_2" in metrics and "S" in metrics and "P" in metrics
        grid = np.array(metrics["a"])
        assert grid.shape == (2, 2)
        assert np.all((grid >= 0) & (grid <= 1))

    def test_probe_single_task_grid(self, tmp_path):
        cfg_text = FAST_CONFIG.replace("num_tasks: 2", "num_tasks: 1")
        cfg_path = tmp_path / "cfg1.yaml"
        cfg_path.write_text(cfg_text)
        data = str(tmp_path / "d.bin")
        out_dir = str(tmp_path / "run1")
        assert cli_main(["gen-data", "--config", str(cfg_path),
                         "--out", data]) == 0
        assert cli_main(["train", "--config", str(cfg_path), "--data", data,
                         "--out-dir", out_dir]) == 0
        prefix = str(tmp_path / "m")
        assert cli_main(["probe", "--config", str(cfg_path), "--data", data,
                         "--checkpoints", out_dir, "--out", prefix]) == 0
        lines = open(f"{prefix}_seed1.csv").read().strip().split("\n")
        assert len(lines) == 2  # header + one task row

    @pytest.mark.parametrize("scenario", ["data_il", "domain_il"])
    def test_other_scenarios_end_to_end(self, tmp_path, scenario):
        cfg_text = FAST_CONFIG.replace("scenario: class_il",
                                       f"scenario: {scenario}")
        cfg_path = tmp_path / "cfg.yaml"
        cfg_path.write_text(cfg_text)
        data = str(tmp_path / "d.bin")
        out_dir = str(tmp_path / "run")
        prefix = str(tmp_path / "m")
        assert cli_main(["gen-data", "--config", str(cfg_path),
                         "--out", data]) == 0
        assert cli_main(["train", "--config", str(cfg_path), "--data", data,
                         "--out-dir", out_dir, "--no-ft-refs"]) == 0
        assert cli_main(["probe", "--config", str(cfg_path), "--data", data,
                         "--checkpoints", out_dir, "--out", prefix]) == 0
        with open(f"{prefix}_seed1.json") as fh:
            metrics = json.load(fh)
        assert "A_2" in metrics and "P" not in metrics  # no FT refs

    def test_report_aggregation(self, tmp_path):
        m1 = tmp_path / "m1.json"
        m2 = tmp_path / "m2.json"
        m1.write_text(json.dumps({"A_2": 0.8, "seed": 1}))
        m2.write_text(json.dumps({"A_2": 0.9, "seed": 2}))
        out = tmp_path / "agg.csv"
        assert cli_main(["report", "--metrics", str(m1), str(m2),
                         "--out", str(out)]) == 0
        body = out.read_text()
        assert body.splitlines()[0] == "metric,mean,std,n"
        assert any(line.startswith("A_2,") for line in body.splitlines())

    def test_bad_config_exit_one(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("scenario: bogus\n")
        assert cli_main(["gen-data", "--config", str(bad),
                         "--out", str(tmp_path / "x.bin")]) == 1
        assert "config error" in capsys.readouterr().err

    def test_missing_data_exit_two(self, workdir, capsys):
        tmp, cfg = workdir
        code = cli_main(["train", "--config", cfg,
                         "--data", str(tmp / "missing.bin"),
                         "--out-dir", str(tmp / "o")])
        assert code == 2
        assert "i/o error" in capsys.readouterr().err

    def test_corrupt_data_exit_two(self, workdir):
        tmp, cfg = workdir
        data = str(tmp / "data.bin")
        assert cli_main(["gen-data", "--config", cfg, "--out", data]) == 0
        raw = bytearray(open(data, "rb").read())
        raw[30] ^= 0xFF
        open(data, "wb").write(bytes(raw))
        assert cli_main(["train", "--config", cfg, "--data", data,
                         "--out-dir", str(tmp / "o")]) == 2

    def test_gradcheck_subset(self, capsys):
        assert cli_main(["gradcheck", "--loss", "byol_loss",
                         "--trials", "3"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out

    def test_gradcheck_unknown_loss(self, capsys):
        assert cli_main(["gradcheck", "--loss", "nope"]) == 1

    def test_default_config_round_trips(self, tmp_path, capsys):
        out = tmp_path / "default.yaml"
        assert cli_main(["default-config", "--out", str(out)]) == 0
        cfg = load_config(str(out))
        assert cfg.num_tasks == 5
