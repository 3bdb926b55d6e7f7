"""Checkpoint format, CLI exit codes, end-to-end command behavior."""

import json

import numpy as np
import pytest

from taskdistill.autograd import DataError
from taskdistill.checkpoint import load_checkpoint, save_checkpoint
from taskdistill.cli import (
    EXIT_CONFIG,
    EXIT_DIGEST,
    EXIT_GRADCHECK,
    EXIT_OK,
    main,
)
from taskdistill.config import NetworkConfig
from taskdistill.network import build_network


def small_config_dict():
    return {
        "network": {
            "n_channels": 8,
            "encoder_stage_channels": [4, 4, 8],
            "num_classes": 3,
            "distill_variant": "C",
            "active_inputs": ["depth", "parsing", "normal", "contour"],
            "final_tasks": ["depth", "parsing"],
            "deep_supervision": True,
        },
        "training": {
            "batch_size": 2,
            "phase1": {"learning_rate": 1e-3, "epochs": 1},
            "phase2": {"learning_rate": 1e-4, "epochs": 1},
        },
        "data": {"canvas": 16, "train_count": 4, "val_count": 2},
    }


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(small_config_dict()))
    return path


class TestCheckpointFormat:
    def test_round_trip_values(self, tmp_path):
        cfg = NetworkConfig().validate()
        store = build_network(cfg, seed=1)
        params = {n: store[n].data for n in store.names()}
        vel = {n: np.zeros_like(store[n].data) for n in store.names()[:3]}
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, cfg.digest(), 123, 2, params, vel)
        ck = load_checkpoint(path)
        assert ck.digest == cfg.digest()
        assert ck.iteration == 123 and ck.phase == 2
        assert list(ck.params) == list(params)
        for n, arr in params.items():
            np.testing.assert_array_equal(
                ck.params[n], arr.astype(np.float32).astype(np.float64))
        assert list(ck.velocities) == list(vel)

    def test_save_load_save_byte_identical(self, tmp_path):
        cfg = NetworkConfig().validate()
        store = build_network(cfg, seed=2)
        params = {n: store[n].data for n in store.names()}
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(p1, cfg.digest(), 7, 1, params, {})
        ck = load_checkpoint(p1)
        save_checkpoint(p2, ck.digest, ck.iteration, ck.phase, ck.params, ck.velocities)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncation_reports_offset(self, tmp_path):
        path = tmp_path / "t.ckpt"
        save_checkpoint(path, 1, 1, 1, {"w": np.ones((1, 2, 3, 4))}, {})
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(DataError, match="truncated"):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"NOPE" + bytes(32))
        with pytest.raises(DataError, match="magic"):
            load_checkpoint(path)


class TestTrainEvalCommands:
    def test_train_writes_artifacts_and_is_deterministic(self, tmp_path, config_file):
        out1 = tmp_path / "run1"
        out2 = tmp_path / "run2"
        assert main(["train", "--config", str(config_file), "--seed", "3",
                     "--out", str(out1)]) == EXIT_OK
        assert main(["train", "--config", str(config_file), "--seed", "3",
                     "--out", str(out2)]) == EXIT_OK
        for name in ("final.ckpt", "latest.ckpt", "loss_curve.tsv", "metrics.tsv"):
            assert (out1 / name).exists()
        assert (out1 / "final.ckpt").read_bytes() == (out2 / "final.ckpt").read_bytes()
        assert (out1 / "loss_curve.tsv").read_text() == (out2 / "loss_curve.tsv").read_text()
        assert (out1 / "metrics.tsv").read_text() == (out2 / "metrics.tsv").read_text()
        curve = (out1 / "loss_curve.tsv").read_text().splitlines()
        assert curve[0].startswith("iteration\tphase")
        assert len(curve) > 1

    def test_missing_config_field_exits_2_naming_field(self, tmp_path, capsys):
        raw = small_config_dict()
        del raw["network"]["n_channels"]
        path = tmp_path / "broken.json"
        path.write_text(json.dumps(raw))
        code = main(["train", "--config", str(path), "--seed", "0",
                     "--out", str(tmp_path / "o")])
        assert code == EXIT_CONFIG
        err = capsys.readouterr().err
        assert "n_channels" in err

    def test_invalid_json_exits_2(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert main(["train", "--config", str(path), "--seed", "0",
                     "--out", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_eval_matches_and_digest_guard(self, tmp_path, config_file, capsys):
        out = tmp_path / "run"
        assert main(["train", "--config", str(config_file), "--seed", "1",
                     "--out", str(out)]) == EXIT_OK
        scene_cfg = tmp_path / "scene.json"
        scene_cfg.write_text(json.dumps({"canvas": 16, "num_classes": 3}))
        data = tmp_path / "val.bin"
        assert main(["gen-data", "--scene-config", str(scene_cfg), "--count", "2",
                     "--out", str(data), "--seed", "99"]) == EXIT_OK
        code = main(["eval", "--ckpt", str(out / "final.ckpt"), "--data", str(data),
                     "--config", str(config_file),
                     "--dump-dir", str(tmp_path / "dumps")])
        assert code == EXIT_OK
        table = capsys.readouterr().out
        assert table.splitlines()[0].startswith("method\t")
        assert (tmp_path / "dumps" / "pred_000000.depth.bin").exists()
        assert (tmp_path / "dumps" / "pred_000001.labels.bin").exists()

        # architecture mismatch -> exit 4
        other = small_config_dict()
        other["network"]["n_channels"] = 12
        other_path = tmp_path / "other.json"
        other_path.write_text(json.dumps(other))
        code = main(["eval", "--ckpt", str(out / "final.ckpt"), "--data", str(data),
                     "--config", str(other_path)])
        assert code == EXIT_DIGEST

    def test_eval_ignores_ground_truth_channels(self, tmp_path, config_file):
        from taskdistill.config import load_experiment
        from taskdistill.data import generate_dataset, read_dataset, write_dataset
        from taskdistill.evaluate import predict

        out = tmp_path / "run"
        assert main(["train", "--config", str(config_file), "--seed", "2",
                     "--out", str(out)]) == EXIT_OK
        exp = load_experiment(config_file)
        ck = load_checkpoint(out / "final.ckpt")
        store = build_network(exp.network, seed=0)
        store.load_values(ck.params)
        samples = generate_dataset(55, 2, exp.scene)
        zeroed = []
        for s in samples:
            import dataclasses

            zeroed.append(dataclasses.replace(
                s, depth=np.zeros_like(s.depth),
                labels=np.zeros_like(s.labels)))
        p1 = predict(store, exp.network, samples)
        p2 = predict(store, exp.network, zeroed)
        for (d1, l1), (d2, l2) in zip(p1, p2):
            np.testing.assert_array_equal(d1, d2)
            np.testing.assert_array_equal(l1, l2)

    def test_eval_empty_dataset_is_undefined_exit_0(self, tmp_path, config_file, capsys):
        out = tmp_path / "run"
        assert main(["train", "--config", str(config_file), "--seed", "1",
                     "--out", str(out)]) == EXIT_OK
        from taskdistill.data import write_dataset

        data = tmp_path / "empty.bin"
        write_dataset(data, [])
        code = main(["eval", "--ckpt", str(out / "final.ckpt"), "--data", str(data),
                     "--config", str(config_file)])
        assert code == EXIT_OK
        assert "undefined" in capsys.readouterr().out

    def test_gen_data_round_trip(self, tmp_path):
        scene_cfg = tmp_path / "scene.json"
        scene_cfg.write_text(json.dumps({"canvas": 16, "num_classes": 4}))
        data = tmp_path / "set.bin"
        assert main(["gen-data", "--scene-config", str(scene_cfg), "--count", "3",
                     "--out", str(data), "--seed", "7"]) == EXIT_OK
        from taskdistill.data import read_dataset

        assert len(read_dataset(data)) == 3


class TestVariantRegistry:
    def test_every_table_row_registered(self):
        from taskdistill.variants import REGISTRY

        table1 = {"front-de", "front-de-sp", "distill-a-de", "distill-b-de",
                  "distill-c-de", "distill-c-de-sp"}
        table2 = {"front-sp", "front-de-sp", "distill-a-sp", "distill-b-sp",
                  "distill-c-sp", "distill-c-de-sp"}
        table6 = {"mtdn-mds", "mtdn-inp0", "mtdn-inp2", "mtdn-inp3", "mtdn-full"}
        assert table1 <= set(REGISTRY)
        assert table2 <= set(REGISTRY)
        assert table6 <= set(REGISTRY)

    def test_grid_rows_match_tables(self):
        from taskdistill.variants import GRIDS

        assert len(GRIDS["distill-modules"]) == 6
        assert GRIDS["input-count"] == ("mtdn-inp0", "mtdn-inp2", "mtdn-inp3",
                                        "mtdn-full")

    def test_name_uniquely_determines_fields(self):
        from taskdistill.variants import REGISTRY

        assert len({v.name for v in REGISTRY.values()}) == len(REGISTRY)

    def test_ablate_single_seed_cells_equal_single_run(self, tmp_path, config_file):
        out = tmp_path / "ablate"
        code = main(["ablate", "--grid", "input-count", "--seeds", "1",
                     "--out", str(out), "--config", str(config_file)])
        assert code == EXIT_OK
        table = (out / "ablation_input-count.tsv").read_text().splitlines()
        assert table[0].startswith("method\t")
        rows = [l for l in table if l and not l.startswith(("#", "method"))]
        assert len(rows) == 4
        runs = (out / "ablation_input-count_runs.tsv").read_text().splitlines()
        # median of one seed equals that run's metrics
        med = rows[0].split("\t")[1:]
        raw = runs[1].split("\t")[2:]
        assert med == raw

    def test_unknown_grid_rejected(self, tmp_path, capsys):
        with pytest.raises(SystemExit):
            main(["ablate", "--grid", "nope", "--seeds", "1", "--out", str(tmp_path)])
