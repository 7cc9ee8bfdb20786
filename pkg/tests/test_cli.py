"""End-to-end tests of the command-line surface on tiny runs."""

import json

import numpy as np
import pytest

from optc import cli
from optc.cloudio import read_cloud


TINY_CONFIG = """\
scene:
  points_per_primitive: 32
sorter:
  hidden: [8, 8]
  k: 4
model:
  width: 8
  heads: 2
  blocks: 1
  window_size: 8
train:
  epochs: 4
  warmup_epochs: 2
  max_lr: 0.01
"""


@pytest.fixture()
def tiny_env(tmp_path):
    config = tmp_path / "config.yaml"
    config.write_text(TINY_CONFIG)
    scenes = tmp_path / "scenes"
    rc = cli.main(
        ["gen-scenes", "--config", str(config), "--out", str(scenes), "--count", "3", "--seed", "5"]
    )
    assert rc == 0
    return config, sorted(scenes.glob("scene_*.optc"))


class TestGenScenes:
    def test_writes_requested_count(self, tiny_env):
        _, scenes = tiny_env
        assert len(scenes) == 3
        cloud = read_cloud(scenes[0])
        assert cloud.n == 32 * 9  # default scene config has 9 primitives

    def test_distinct_seeds_distinct_scenes(self, tiny_env):
        _, scenes = tiny_env
        a = read_cloud(scenes[0])
        b = read_cloud(scenes[1])
        assert not np.array_equal(a.positions, b.positions)

    def test_byte_identical_rerun(self, tiny_env, tmp_path):
        config, scenes = tiny_env
        out2 = tmp_path / "again"
        assert (
            cli.main(
                ["gen-scenes", "--config", str(config), "--out", str(out2), "--count", "1", "--seed", "5"]
            )
            == 0
        )
        assert (out2 / "scene_000.optc").read_bytes() == scenes[0].read_bytes()


class TestTrainAndEval:
    def test_train_then_eval(self, tiny_env, tmp_path):
        config, scenes = tiny_env
        run = tmp_path / "run"
        rc = cli.main(
            ["train", "--config", str(config), "--out", str(run), "--seed", "7"]
            + [str(p) for p in scenes]
        )
        assert rc == 0
        assert (run / "checkpoints" / "model.ckpt").exists()
        assert (run / "checkpoints" / "sorter.ckpt").exists()
        assert (run / "history.jsonl").exists()
        assert (run / "effective-config.yaml").exists()
        assert (run / "figures" / "training.png").exists()
        header = (run / "report_iou.csv").read_text().splitlines()[0]
        assert header == "method,mIoU,Background,Bldg-Dmg,Bldg-No-Dmg,Road,Tree"

        records = [json.loads(l) for l in (run / "history.jsonl").read_text().splitlines()]
        assert len(records) == 4
        assert records[0]["serialization"].startswith("static:")
        assert records[-1]["serialization"] == "learned"
        assert "wall_time" not in records[0]

        out = tmp_path / "eval"
        rc = cli.main(
            ["eval", "--checkpoint", str(run / "checkpoints"), "--out", str(out)]
            + [str(p) for p in scenes]
        )
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert 0.0 <= report["metrics"]["oa"] <= 1.0
        assert (out / "figures" / "metrics.png").exists()

        # re-evaluating the training scenes reproduces the OA train logged
        train_report = json.loads((run / "report.json").read_text())
        assert report["metrics"]["oa"] == train_report["train_set"]["oa"]

    def test_train_history_byte_identical_across_runs(self, tiny_env, tmp_path):
        config, scenes = tiny_env
        args_tail = ["--config", str(config), "--seed", "3"] + [str(p) for p in scenes]
        run1, run2 = tmp_path / "r1", tmp_path / "r2"
        assert cli.main(["train", "--out", str(run1)] + args_tail) == 0
        assert cli.main(["train", "--out", str(run2)] + args_tail) == 0
        assert (run1 / "history.jsonl").read_bytes() == (run2 / "history.jsonl").read_bytes()
        assert (run1 / "report.json").read_bytes() == (run2 / "report.json").read_bytes()
        assert (run1 / "checkpoints" / "model.ckpt").read_bytes() == (
            run2 / "checkpoints" / "model.ckpt"
        ).read_bytes()

    def test_train_sorter_outputs(self, tiny_env, tmp_path):
        config, scenes = tiny_env
        run = tmp_path / "sorter-run"
        rc = cli.main(
            ["train-sorter", "--config", str(config), "--out", str(run), "--k", "3"]
            + [str(p) for p in scenes]
        )
        assert rc == 0
        assert (run / "sorter.ckpt").exists()
        assert (run / "figures" / "sorter_training.png").exists()
        echoed = (run / "effective-config.yaml").read_text()
        assert "k: 3" in echoed


class TestCompareOrders:
    def test_all_static_rows_plus_learned(self, tiny_env, tmp_path):
        config, scenes = tiny_env
        run = tmp_path / "sorter-run"
        assert (
            cli.main(
                ["train-sorter", "--config", str(config), "--out", str(run)]
                + [str(p) for p in scenes]
            )
            == 0
        )
        out = tmp_path / "cmp"
        rc = cli.main(
            [
                "compare-orders",
                "--out", str(out),
                "--checkpoint", str(run / "sorter.ckpt"),
                "--k", "4",
                "--window", "8",
            ]
            + [str(p) for p in scenes]
        )
        assert rc == 0
        rows = json.loads((out / "locality.json").read_text())["rows"]
        methods = [r["method"] for r in rows]
        assert methods == ["z-order", "z-order-rev", "hilbert", "hilbert-rev", "learned"]
        assert (out / "figures" / "compare_orders.png").exists()

    def test_missing_checkpoint_degrades_with_warning(self, tiny_env, tmp_path, capsys):
        _, scenes = tiny_env
        out = tmp_path / "cmp"
        rc = cli.main(
            ["compare-orders", "--out", str(out), "--k", "4"] + [str(p) for p in scenes]
        )
        assert rc == 0
        assert "warning" in capsys.readouterr().err
        rows = json.loads((out / "locality.json").read_text())["rows"]
        assert [r["method"] for r in rows] == [
            "z-order", "z-order-rev", "hilbert", "hilbert-rev",
        ]


class TestAblateK:
    def test_five_row_table(self, tiny_env, tmp_path):
        config, scenes = tiny_env
        out = tmp_path / "abl"
        rc = cli.main(
            [
                "ablate-k",
                "--config", str(config),
                "--out", str(out),
                "--k-values", "2,3,4",
            ]
            + [str(p) for p in scenes]
        )
        assert rc == 0
        lines = (out / "ablation.csv").read_text().splitlines()
        assert lines[0].startswith("k,mIoU,mAcc,OA,retention")
        assert len(lines) == 4
        assert (out / "figures" / "ablation.png").exists()

    def test_bad_k_values_is_config_error(self, tiny_env, tmp_path):
        config, scenes = tiny_env
        rc = cli.main(
            ["ablate-k", "--config", str(config), "--out", str(tmp_path / "x"),
             "--k-values", "4,banana"]
            + [str(p) for p in scenes]
        )
        assert rc == 2


class TestErrorPaths:
    def test_unknown_config_key_exit_2(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("nope: 1\n")
        rc = cli.main(
            ["gen-scenes", "--config", str(bad), "--out", str(tmp_path / "o")]
        )
        assert rc == 2

    def test_missing_cloud_file_exit_2(self, tmp_path):
        rc = cli.main(
            ["train", "--out", str(tmp_path / "o"), str(tmp_path / "missing.optc")]
        )
        assert rc == 2

    def test_malformed_cloud_exit_2(self, tmp_path):
        bad = tmp_path / "bad.optc"
        bad.write_text("not a cloud\n")
        rc = cli.main(["train", "--out", str(tmp_path / "o"), str(bad)])
        assert rc == 2

    def test_eval_missing_checkpoint_exit_2(self, tiny_env, tmp_path):
        _, scenes = tiny_env
        rc = cli.main(
            ["eval", "--checkpoint", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o")]
            + [str(p) for p in scenes]
        )
        assert rc == 2


class TestGradCheckCommand:
    def test_passes_quickly_with_few_seeds(self, capsys):
        rc = cli.main(["grad-check", "--seeds", "2"])
        assert rc == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 7
        assert "all checks passed" in out
