"""CLI tests: config parsing/validation, subcommands, artifact discipline."""

import json
import os

import numpy as np
import pytest

from metaprune.cli import (
    CONFIG_SCHEMA,
    RunConfig,
    config_from_dict,
    default_out_dir,
    load_config,
    main,
)
from metaprune.errors import ConfigError


class TestConfig:
    def test_empty_doc_gives_defaults(self):
        cfg = config_from_dict({})
        assert cfg.template == "mininet"
        assert cfg.max_training == 64
        assert cfg.max_iter == 20
        assert cfg.max_tuning == 30
        assert cfg.dataset["format"] == "synthetic"
        assert cfg.search["flops_window_frac"] == [0.30, 0.65]

    def test_roundtrip_parse_serialize_parse(self):
        doc = {
            "schema": CONFIG_SCHEMA,
            "template": "mininet",
            "dataset": {"format": "synthetic", "n_train": 500, "n_val": 100},
            "epochs": {"max_training": 3, "max_iter": 2, "max_tuning": 1},
            "seed": 5,
            "out": "runs/x",
        }
        cfg = config_from_dict(doc)
        again = config_from_dict(cfg.to_dict())
        assert again == cfg
        assert again.to_dict() == cfg.to_dict()

    def test_all_violations_reported_at_once(self):
        doc = {
            "dataset": {"format": "csv", "n_train": -1},
            "reward": {"baseline_accuracy": 1.5},
            "epochs": {"max_training": -2},
            "seed": -3,
            "typo_field": 1,
        }
        with pytest.raises(ConfigError) as err:
            config_from_dict(doc)
        text = str(err.value)
        for fragment in ("dataset.format", "dataset.n_train", "baseline_accuracy",
                         "epochs.max_training", "seed", "typo_field"):
            assert fragment in text, fragment

    def test_exclusive_flops_windows(self):
        doc = {"search": {"flops_window_frac": [0.3, 0.6],
                          "flops_window_macs": [1e5, 2e5]}}
        with pytest.raises(ConfigError, match="exclusive"):
            config_from_dict(doc)

    def test_idx_requires_path(self):
        with pytest.raises(ConfigError, match="dataset.path"):
            config_from_dict({"dataset": {"format": "idx"}})

    def test_bad_schedule_reported(self):
        doc = {"meta_schedule": {"kind": "cosine", "initial_lr": 0.1}}
        with pytest.raises(ConfigError, match="meta_schedule"):
            config_from_dict(doc)

    def test_env_var_default_out(self, monkeypatch):
        monkeypatch.setenv("METAPRUNE_OUT", "/tmp/elsewhere")
        assert default_out_dir() == "/tmp/elsewhere"
        cfg = config_from_dict({})
        assert cfg.out == "/tmp/elsewhere"

    def test_flag_overrides_beat_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"seed": 1, "out": "runs/file",
                                    "epochs": {"max_iter": 9}}))
        import argparse

        ns = argparse.Namespace(
            template=None, dataset=None, format=None, seed=77, workers=None,
            out=str(tmp_path / "flag"), max_training=None, max_iter=3,
            max_tuning=None, batch_size=None,
        )
        cfg = load_config(str(path), ns)
        assert cfg.seed == 77
        assert cfg.out == str(tmp_path / "flag")
        assert cfg.max_iter == 3

    def test_missing_config_file(self):
        import argparse

        ns = argparse.Namespace()
        with pytest.raises(ConfigError, match="not found"):
            load_config("/nonexistent/cfg.json", ns)


class TestAnalyticCommands:
    def test_flops_resnet50_prints_baseline(self, capsys):
        assert main(["flops", "--template", "resnet50"]) == 0
        out = capsys.readouterr().out
        flops_line = next(l for l in out.splitlines() if l.startswith("flops:"))
        value = float(flops_line.split("(")[1].split("M")[0])
        assert value == pytest.approx(4110, rel=0.03)

    def test_flops_custom_nev(self, capsys):
        assert main(["flops", "--template", "mininet", "--nev", "0,0,0,0"]) == 0
        out = capsys.readouterr().out
        assert "nev: 0,0,0,0" in out

    def test_flops_bad_nev_fails(self, capsys):
        assert main(["flops", "--template", "mininet", "--nev", "99,0,0,0"]) == 1
        assert "error" in capsys.readouterr().err

    def test_distribution_writes_csv(self, tmp_path, capsys):
        code = main([
            "distribution", "--template", "mininet", "--n", "200",
            "--slot-range", "0", "15", "--bins", "10",
            "--seed", "3", "--out", str(tmp_path),
        ])
        assert code == 0
        path = tmp_path / "flops_histogram.csv"
        assert path.exists()
        lines = path.read_text().splitlines()
        total = sum(int(l.split(",")[2]) for l in lines[2:])
        assert total == 200

    def test_reward_surface_single_cell(self, tmp_path, capsys):
        code = main([
            "reward-surface", "--ba", "0.9", "--bf", "1000000",
            "--acc", "0.5", "0.5", "1", "--flops", "0.5", "0.5", "1",
            "--out", str(tmp_path),
        ])
        assert code == 0
        lines = (tmp_path / "reward_surface.csv").read_text().splitlines()
        from metaprune.reward import RewardParams, reward

        cell = float(lines[2].split(",")[1])
        expected = reward(0.5, 0.5e6, RewardParams(0.9, 1e6)).reward
        assert cell == pytest.approx(expected, rel=1e-12)


class TestPipelineCommands:
    @pytest.fixture()
    def quick_config(self, tmp_path):
        doc = {
            "template": "mininet",
            "dataset": {"format": "synthetic", "n_train": 300, "n_val": 200,
                        "noise": 3.0, "seed": 7},
            "epochs": {"max_training": 1, "max_iter": 1, "max_tuning": 1},
            "search": {"population": 8, "breeders": 3, "k_elite": 1,
                       "mutants": 3, "crossovers": 2},
            "seed": 4,
            "out": str(tmp_path / "run"),
        }
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(doc))
        return path, tmp_path / "run"

    def test_run_all_then_report_identical(self, quick_config, capsys):
        cfg_path, out = quick_config
        assert main(["run-all", "--config", str(cfg_path)]) == 0
        capsys.readouterr()
        assert main(["report", "--config", str(cfg_path)]) == 0
        printed = capsys.readouterr().out
        assert json.loads(printed) == json.loads((out / "report.json").read_text())

    def test_phases_in_sequence(self, quick_config, capsys):
        cfg_path, out = quick_config
        assert main(["meta-train", "--config", str(cfg_path)]) == 0
        assert (out / "hypernet.ckpt").exists()
        assert main(["search", "--config", str(cfg_path)]) == 0
        assert (out / "best_gene.json").exists()
        assert main(["retrain", "--config", str(cfg_path)]) == 0
        assert (out / "report.json").exists()

    def test_search_without_meta_fails(self, quick_config, capsys):
        cfg_path, out = quick_config
        assert main(["search", "--config", str(cfg_path)]) == 1
        assert "meta-train first" in capsys.readouterr().err

    def test_retrain_without_search_fails(self, quick_config, capsys):
        cfg_path, out = quick_config
        assert main(["retrain", "--config", str(cfg_path)]) == 1
        assert "search first" in capsys.readouterr().err

    def test_report_before_run_fails(self, quick_config, capsys):
        cfg_path, _ = quick_config
        assert main(["report", "--config", str(cfg_path)]) == 1

    def test_invalid_config_exit_code_2(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"seed": -1, "dataset": {"format": "csv"}}))
        assert main(["run-all", "--config", str(path)]) == 2
        err = capsys.readouterr().err
        assert "seed" in err and "dataset.format" in err

    def test_writes_only_inside_out_dir(self, quick_config, tmp_path, monkeypatch):
        cfg_path, out = quick_config
        work = tmp_path / "cwd"
        work.mkdir()
        monkeypatch.chdir(work)
        before = set(work.iterdir())
        assert main(["run-all", "--config", str(cfg_path)]) == 0
        assert set(work.iterdir()) == before  # nothing leaked into cwd
        assert (out / "report.json").exists()

    def test_seed_flag_changes_run(self, quick_config, capsys):
        cfg_path, out = quick_config
        assert main(["meta-train", "--config", str(cfg_path), "--seed", "5",
                     "--out", str(out.parent / "s5")]) == 0
        assert main(["meta-train", "--config", str(cfg_path), "--seed", "5",
                     "--out", str(out.parent / "s5b")]) == 0
        a = (out.parent / "s5" / "hypernet.ckpt").read_bytes()
        b = (out.parent / "s5b" / "hypernet.ckpt").read_bytes()
        assert a == b
