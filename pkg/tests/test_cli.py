import json
from pathlib import Path

import pytest

from mogan.cli import main

TINY_TRAIN = {
    "lr": 1e-4,
    "disc_lr": 2e-4,
    "total_steps": 6,
    "warmup_steps": 2,
    "fake_score_iters": 2,
    "batch_size_disc": 2,
    "batch_size_gen": 2,
    "chunks": 2,
    "window_len": 1,
    "checkpoint_interval": 0,
    "seed": 5,
    "model": {
        "width": 32, "depth": 2, "heads": 2, "latent_channels": 2,
        "frames_per_chunk": 2, "frame_size": 16, "decoder_width": 16,
        "decoder_hidden": 8,
    },
    "disc": {
        "frame_size": 16, "patch": 8, "width": 32, "depth": 3, "heads": 2,
        "head_depths": [2, 3], "head_width": 8,
    },
    "flow": {"iterations": 8, "levels": 1},
}

TINY_CORPUS = {"clips": 16, "eval_clips": 4, "frames": 4, "size": 16, "radius": 4.0, "seed": 2}

TINY_PRETRAIN = {
    "corpus": dict(TINY_CORPUS, clips=16, slow_fraction=0.5),
    "model": TINY_TRAIN["model"],
    "teacher_steps": 30,
    "decoder_steps": 20,
    "batch_size": 8,
    "decoder_batch_size": 4,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "corpus.json").write_text(json.dumps(TINY_CORPUS))
    (root / "pretrain.json").write_text(json.dumps(TINY_PRETRAIN))
    assert main(["datagen", "--config", str(root / "corpus.json"), "--out", str(root / "data")]) == 0
    assert main(["pretrain", "--config", str(root / "pretrain.json"), "--out", str(root / "base.pt")]) == 0
    run_spec = {
        "name": "smoke",
        "dataset": str(root / "data"),
        "base": str(root / "base.pt"),
        "train": TINY_TRAIN,
    }
    (root / "run.json").write_text(json.dumps(run_spec))
    return root


def _run_env(monkeypatch, root):
    monkeypatch.setenv("MOGAN_RUNS_DIR", str(root / "runs"))


class TestDatagen:
    def test_refuses_non_empty_without_force(self, workspace):
        assert main(["datagen", "--config", str(workspace / "corpus.json"),
                     "--out", str(workspace / "data")]) == 2

    def test_force_overwrites(self, workspace):
        assert main(["datagen", "--config", str(workspace / "corpus.json"),
                     "--out", str(workspace / "data"), "--force"]) == 0

    def test_same_seed_identical_manifests(self, workspace, tmp_path):
        for d in ("a", "b"):
            assert main(["datagen", "--config", str(workspace / "corpus.json"),
                         "--out", str(tmp_path / d), "--seed", "7"]) == 0
        ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
        mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
        for m in (ma, mb):
            for clip in m["clips"]:
                clip["path"] = Path(clip["path"]).name
        assert ma == mb

    def test_invalid_trajectory_exits_2(self, tmp_path):
        bad = dict(TINY_CORPUS, families=[["warp", "teleport", [1.0, 0.0]]], classes=1)
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps(bad))
        assert main(["datagen", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 2


class TestTrain:
    def test_smoke_run_writes_metrics(self, workspace, monkeypatch):
        _run_env(monkeypatch, workspace)
        assert main(["train", str(workspace / "run.json"), "--steps", "10"]) == 0
        run_dir = workspace / "runs" / "smoke"
        lines = (run_dir / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 10
        assert (run_dir / "checkpoints" / "final.pt").exists()
        config = json.loads((run_dir / "config.json").read_text())
        assert config["weights"] == {"gan_g": 0.5, "gan_d": 0.5, "r1": 0.3, "r2": 0.3,
                                     "sigma": 0.01, "dmd": 1.0}

    def test_ablation_no_dmd_has_no_dmd_entries(self, workspace, monkeypatch):
        _run_env(monkeypatch, workspace)
        assert main(["train", str(workspace / "run.json"), "--steps", "4",
                     "--ablation", "no_dmd"]) == 0
        lines = (workspace / "runs" / "smoke-no_dmd" / "metrics.jsonl").read_text().splitlines()
        assert lines
        for line in lines:
            assert "loss_dmd" not in json.loads(line)

    def test_missing_dataset_fails_with_path(self, workspace, monkeypatch, tmp_path, capsys):
        _run_env(monkeypatch, workspace)
        spec = json.loads((workspace / "run.json").read_text())
        spec["dataset"] = str(tmp_path / "nowhere")
        bad = tmp_path / "run.json"
        bad.write_text(json.dumps(spec))
        assert main(["train", str(bad)]) == 2
        assert "nowhere" in capsys.readouterr().err

    def test_missing_required_field_exits_2(self, workspace, tmp_path):
        bad = tmp_path / "run2.json"
        bad.write_text(json.dumps({"name": "x"}))
        assert main(["train", str(bad)]) == 2


class TestEval:
    def test_same_checkpoint_all_deltas_zero(self, workspace, monkeypatch):
        _run_env(monkeypatch, workspace)
        ckpt = workspace / "runs" / "smoke" / "checkpoints" / "final.pt"
        out = workspace / "eval_same"
        assert main(["eval", str(ckpt), str(ckpt), "--dataset", str(workspace / "data"),
                     "--out", str(out), "--seeds", "2"]) == 0
        deltas = json.loads((out / "deltas.json").read_text())["deltas_a_minus_b"]
        assert all(v == 0.0 for v in deltas.values())

    def test_outputs_table_and_flow_panels(self, workspace):
        out = workspace / "eval_same"
        table = (out / "comparison.txt").read_text()
        for col in ("smoothness", "dynamics", "motion_score"):
            assert col in table.splitlines()[0]
        pngs = list((out / "flow_panels").rglob("*.png"))
        # one sequence per (model, prompt, seed): 2 models x 8 prompts x 2 seeds
        stems = {p.name.rsplit("_flow_", 1)[0] for p in pngs}
        assert len(stems) == 2 * 8 * 2
        for stem in stems:
            assert stem.startswith("model_")

    def test_incompatible_checkpoint_reports_versions(self, workspace, tmp_path, capsys):
        import torch

        ckpt = workspace / "runs" / "smoke" / "checkpoints" / "final.pt"
        blob = torch.load(ckpt, weights_only=False)
        blob["format_version"] = 42
        bad = tmp_path / "bad.pt"
        torch.save(blob, bad)
        assert main(["eval", str(bad), str(bad), "--dataset", str(workspace / "data"),
                     "--out", str(tmp_path / "out")]) == 2
        assert "42" in capsys.readouterr().err
