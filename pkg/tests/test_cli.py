"""Command-line surface: exit codes, artifacts, determinism, schemas."""
import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from reactplan.cli import main
from reactplan.config import RunConfig
from reactplan.learning import save_dataset, synthetic_dataset
from reactplan.sampler import SamplerConfig
from reactplan.scenarios import builtin_templates


@pytest.fixture()
def scenario_file(tmp_path):
    path = tmp_path / "merge.json"
    builtin_templates()["merge_dense"].save(path)
    return path


@pytest.fixture()
def small_config(tmp_path):
    cfg = RunConfig(sampler=SamplerConfig(k=6, horizon_steps=6, dt=0.5))
    path = tmp_path / "config.json"
    cfg.save(path)
    return path


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


class TestConfigRoundTrip:
    def test_lossless(self, tmp_path):
        cfg = RunConfig(seed=7, variant="interpolated", set_size=3)
        path = tmp_path / "cfg.json"
        cfg.save(path)
        loaded = RunConfig.load(path)
        assert loaded.to_dict() == cfg.to_dict()
        assert loaded.seed == 7 and loaded.set_size == 3
        np.testing.assert_array_equal(loaded.energy.w_ego, cfg.energy.w_ego)


class TestCmdSample:
    def test_writes_expected_rows(self, tmp_path, scenario_file, small_config):
        out = tmp_path / "out"
        code = main(["--config", str(small_config), "--out", str(out),
                     "sample", str(scenario_file), "--actor", "1"])
        assert code == 0
        with open(out / "candidates.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6 * 6
        assert set(rows[0]) == {"candidate", "t", "x", "y", "heading", "speed"}

    def test_replay_is_byte_identical(self, tmp_path, scenario_file, small_config):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["--config", str(small_config), "--seed", "5",
                         "--out", str(out), "sample", str(scenario_file)]) == 0
        assert read_bytes(out_a / "candidates.csv") == \
            read_bytes(out_b / "candidates.csv")

    def test_single_candidate_config_is_stationary(self, tmp_path, scenario_file):
        cfg_path = tmp_path / "k1.json"
        RunConfig(sampler=SamplerConfig(k=1)).save(cfg_path)
        out = tmp_path / "out"
        assert main(["--config", str(cfg_path), "--out", str(out),
                     "sample", str(scenario_file)]) == 0
        with open(out / "candidates.csv") as fh:
            rows = list(csv.DictReader(fh))
        xs = {row["x"] for row in rows}
        assert len(rows) == 8 and len(xs) == 1

    def test_unknown_actor_exits_2(self, tmp_path, scenario_file):
        assert main(["--out", str(tmp_path / "o"), "sample",
                     str(scenario_file), "--actor", "99"]) == 2

    def test_missing_scenario_exits_2(self, tmp_path):
        assert main(["--out", str(tmp_path / "o"), "sample",
                     str(tmp_path / "nope.json")]) == 2


class TestCmdInfer:
    def test_writes_marginals_and_residuals(self, tmp_path, scenario_file,
                                            small_config):
        out = tmp_path / "out"
        code = main(["--config", str(small_config), "--out", str(out),
                     "infer", str(scenario_file), "--dump-pairwise",
                     "--dump-tables"])
        assert code == 0
        with open(out / "marginals.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 7 * 6          # ego + 6 actors, K = 6
        total = {}
        for row in rows:
            total[row["actor"]] = total.get(row["actor"], 0.0) + \
                float(row["probability"])
        for value in total.values():
            assert value == pytest.approx(1.0, abs=1e-9)
        beliefs = np.load(out / "pairwise_beliefs.npy")
        assert beliefs.shape == (7, 7, 6, 6)
        with open(out / "residuals.csv") as fh:
            res_rows = list(csv.DictReader(fh))
        assert res_rows and float(res_rows[-1]["max_residual"]) >= 0
        with open(out / "tables.json") as fh:
            tables = json.load(fh)
        assert len(tables["unary"]) == 7 * 6


class TestCmdPlan:
    def test_writes_plan_json(self, tmp_path, scenario_file, small_config):
        out = tmp_path / "out"
        assert main(["--config", str(small_config), "--out", str(out),
                     "plan", str(scenario_file), "--variant", "reactive"]) == 0
        with open(out / "plan.json") as fh:
            data = json.load(fh)
        assert 0 <= data["chosen"] < 6
        assert len(data["objective_values"]) == 6
        total = (data["breakdown"]["ego_unary"][data["chosen"]]
                 + data["breakdown"]["interaction"][data["chosen"]]
                 + data["breakdown"]["actor_unary"][data["chosen"]]
                 + data["breakdown"]["goal"][data["chosen"]])
        assert total == pytest.approx(data["objective_values"][data["chosen"]],
                                      abs=1e-9)

    def test_malformed_scenario_exits_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        scenario = builtin_templates()["merge_dense"].to_dict()
        del scenario["ego"]["goal"]
        with open(bad, "w") as fh:
            json.dump(scenario, fh)
        code = main(["--out", str(tmp_path / "o"), "plan", str(bad)])
        assert code == 2


class TestCmdTrain:
    def _dataset(self, tmp_path, n=4):
        scfg = SamplerConfig(k=6, horizon_steps=6, dt=0.5)
        path = tmp_path / "data.jsonl"
        save_dataset(synthetic_dataset(n, seed=3, sampler_cfg=scfg), path)
        return path

    def test_zero_lr_keeps_params(self, tmp_path, small_config):
        data = self._dataset(tmp_path)
        out = tmp_path / "out"
        code = main(["--config", str(small_config), "--out", str(out),
                     "train", str(data), "--lr", "0.0", "--epochs", "2"])
        assert code == 0
        with open(out / "params.json") as fh:
            fitted = json.load(fh)
        initial = RunConfig.load(small_config).energy
        np.testing.assert_array_equal(fitted["w_ego"], initial.w_ego)
        with open(out / "loss.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        assert float(rows[0]["loss"]) == pytest.approx(float(rows[1]["loss"]))

    def test_training_reduces_loss(self, tmp_path, small_config):
        data = self._dataset(tmp_path, n=6)
        out = tmp_path / "out"
        code = main(["--config", str(small_config), "--out", str(out),
                     "train", str(data), "--lr", "0.3", "--epochs", "5"])
        assert code == 0
        with open(out / "loss.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert float(rows[-1]["loss"]) < float(rows[0]["loss"])

    def test_divergence_exits_4(self, tmp_path, small_config):
        data = self._dataset(tmp_path)
        code = main(["--config", str(small_config), "--out",
                     str(tmp_path / "out"), "train", str(data),
                     "--lr", "0.1", "--epochs", "4",
                     "--divergence-threshold", "1e-12"])
        assert code == 4

    def test_missing_dataset_exits_2(self, tmp_path):
        assert main(["--out", str(tmp_path / "o"), "train",
                     str(tmp_path / "none.jsonl")]) == 2


class TestCmdSimulate:
    def _template_dir(self, tmp_path, timer=6.0):
        tdir = tmp_path / "templates"
        tdir.mkdir()
        scenario = replace(builtin_templates()["arc_merge"], timer=timer)
        scenario.save(tdir / "arc.json")
        return tdir

    def test_runs_and_writes_artifacts(self, tmp_path, small_config):
        tdir = self._template_dir(tmp_path)
        out = tmp_path / "out"
        code = main(["--config", str(small_config), "--out", str(out),
                     "simulate", "--templates", str(tdir),
                     "--planners", "reactive,nonreactive", "--variants", "2"])
        assert code == 0
        with open(out / "comparison.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [row["planner"] for row in rows] == ["reactive", "nonreactive"]
        for variant in ("reactive", "nonreactive"):
            with open(out / variant / "aggregate.json") as fh:
                agg = json.load(fh)
            assert agg["episodes"] == 2
            with open(out / variant / "episodes.jsonl") as fh:
                records = [json.loads(line) for line in fh]
            assert any("outcome" in rec for rec in records)
            assert any("step" in rec for rec in records)

    def test_seed_replay_identical_files(self, tmp_path, small_config):
        tdir = self._template_dir(tmp_path)
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            assert main(["--config", str(small_config), "--seed", "11",
                         "--out", str(out), "simulate", "--templates",
                         str(tdir), "--planners", "reactive",
                         "--variants", "2"]) == 0
            outs.append(out)
        assert read_bytes(outs[0] / "comparison.csv") == \
            read_bytes(outs[1] / "comparison.csv")
        assert read_bytes(outs[0] / "reactive" / "episodes.jsonl") == \
            read_bytes(outs[1] / "reactive" / "episodes.jsonl")

    def test_all_skipped_exits_5(self, tmp_path, small_config):
        # overlapping template with negligible perturbation can never be
        # drawn valid
        tdir = tmp_path / "bad_templates"
        tdir.mkdir()
        scenario = builtin_templates()["merge_dense"].to_dict()
        scenario["actors"][0]["state"]["x"] = scenario["actors"][1]["state"]["x"]
        scenario["position_sigma"] = 1e-9
        with open(tdir / "jam.json", "w") as fh:
            json.dump(scenario, fh)
        code = main(["--config", str(small_config), "--out",
                     str(tmp_path / "o"), "simulate", "--templates",
                     str(tdir), "--planners", "reactive", "--variants", "2"])
        assert code == 5

    def test_missing_templates_exits_2(self, tmp_path):
        assert main(["--out", str(tmp_path / "o"), "simulate", "--templates",
                     str(tmp_path / "nowhere")]) == 2


class TestUsageErrors:
    def test_no_command_exits_2(self):
        assert main([]) == 2

    def test_unknown_command_exits_2(self):
        assert main(["frobnicate"]) == 2
