import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from emoalign.cli import run_cli
from emoalign.data import EmbeddingMatrix, write_embedding_matrix

SYNTH_SPEC = {
    "concepts": 3, "labels_per_concept": 4, "datasets": 2,
    "samples_per_dataset": 60, "test_samples_per_dataset": 20,
    "segments": 2, "label_dim": 10, "feature_dim": 16,
    "label_noise": 0.3, "feature_noise": 0.3,
}

TRAIN_CONFIG = {
    "train": {"epochs": 25, "batch_size": 16, "lr": 3e-3, "seed": 0},
    "projector": {"d_model": 16, "heads": 4, "ffn_mult": 2},
    "objective": {"margin": 0.2},
    "eval_k": {"synth0": 4, "synth1": 4},
}


def _dir_digest(root: Path) -> dict:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec_path = root / "synth.json"
    spec_path.write_text(json.dumps(SYNTH_SPEC))
    out = root / "data"
    assert run_cli(["synth", "--spec", str(spec_path), "--seed", "7",
                    "--out", str(out)]) == 0
    return out


class TestSynth:
    def test_outputs_exist(self, synth_dir):
        assert (synth_dir / "synth0_train.jsonl").exists()
        assert (synth_dir / "synth0_test.jsonl").exists()
        assert (synth_dir / "synth1_train.jsonl").exists()
        assert (synth_dir / "synth0_labels.emb").exists()

    def test_same_seed_byte_identical(self, synth_dir, tmp_path):
        spec_path = tmp_path / "synth.json"
        spec_path.write_text(json.dumps(SYNTH_SPEC))
        out = tmp_path / "again"
        assert run_cli(["synth", "--spec", str(spec_path), "--seed", "7",
                        "--out", str(out)]) == 0
        assert _dir_digest(out) == _dir_digest(synth_dir)

    def test_unknown_spec_key_is_data_error(self, tmp_path):
        spec_path = tmp_path / "bad.json"
        spec_path.write_text(json.dumps({**SYNTH_SPEC, "wat": 1}))
        assert run_cli(["synth", "--spec", str(spec_path), "--seed", "1",
                        "--out", str(tmp_path / "x")]) == 2


class TestCluster:
    def test_all_labels_assigned(self, synth_dir, tmp_path):
        out = tmp_path / "clusters.json"
        labels = f"{synth_dir}/synth0_labels.emb,{synth_dir}/synth1_labels.emb"
        assert run_cli(["cluster", "--labels", labels, "--quantile", "0.3",
                        "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert len(doc["assignment"]) == 24  # 2 datasets x 3 concepts x 4 labels
        assert len(doc["centers"]) >= 1

    def test_explicit_bandwidth(self, synth_dir, tmp_path):
        out = tmp_path / "clusters.json"
        assert run_cli(["cluster", "--labels", f"{synth_dir}/synth0_labels.emb",
                        "--bandwidth", "0.5", "--out", str(out)]) == 0
        assert json.loads(out.read_text())["bandwidth"] == 0.5


@pytest.fixture(scope="module")
def pipeline(synth_dir, tmp_path_factory):
    """synth -> cluster -> train, shared by the expensive CLI tests."""
    root = tmp_path_factory.mktemp("pipeline")
    clusters = root / "clusters.json"
    labels = f"{synth_dir}/synth0_labels.emb,{synth_dir}/synth1_labels.emb"
    assert run_cli(["cluster", "--labels", labels, "--out", str(clusters)]) == 0

    config = root / "config.json"
    config.write_text(json.dumps(TRAIN_CONFIG))
    model = root / "model.ckpt"
    manifests = f"{synth_dir}/synth0_train.jsonl,{synth_dir}/synth1_train.jsonl"
    code = run_cli(["train", "--manifest", manifests, "--clusters", str(clusters),
                    "--config", str(config), "--target", "centroid",
                    "--out", str(model)])
    assert code == 0
    return {"root": root, "clusters": clusters, "model": model, "config": config}


class TestPipeline:
    def test_full_pipeline_reaches_high_f1(self, synth_dir, pipeline, tmp_path):
        report_path = tmp_path / "report.json"
        code = run_cli(["eval", "--model", str(pipeline["model"]),
                        "--manifest", f"{synth_dir}/synth0_test.jsonl",
                        "--k", "4", "--out", str(report_path)])
        assert code == 0
        report = json.loads(report_path.read_text())
        assert report["macro_f1"] >= 0.9

    def test_history_written_next_to_checkpoint(self, pipeline):
        history = Path(str(pipeline["model"]) + ".history.jsonl")
        rows = [json.loads(l) for l in history.read_text().splitlines()]
        assert len(rows) == TRAIN_CONFIG["train"]["epochs"]

    def test_train_does_not_mutate_inputs(self, synth_dir, pipeline, tmp_path):
        before = _dir_digest(synth_dir)
        model2 = tmp_path / "model2.ckpt"
        manifests = f"{synth_dir}/synth0_train.jsonl,{synth_dir}/synth1_train.jsonl"
        assert run_cli(["train", "--manifest", manifests,
                        "--clusters", str(pipeline["clusters"]),
                        "--config", str(pipeline["config"]),
                        "--target", "centroid", "--out", str(model2)]) == 0
        assert _dir_digest(synth_dir) == before

    def test_train_same_seed_byte_identical_checkpoint(self, synth_dir, pipeline, tmp_path):
        model2 = tmp_path / "model2.ckpt"
        manifests = f"{synth_dir}/synth0_train.jsonl,{synth_dir}/synth1_train.jsonl"
        assert run_cli(["train", "--manifest", manifests,
                        "--clusters", str(pipeline["clusters"]),
                        "--config", str(pipeline["config"]),
                        "--target", "centroid", "--out", str(model2)]) == 0
        assert model2.read_bytes() == pipeline["model"].read_bytes()

    def test_predict_prints_ranked_labels(self, synth_dir, pipeline, capsys):
        manifest = json.loads(
            (synth_dir / "synth0_test.jsonl").read_text().splitlines()[1]
        )
        code = run_cli(["predict", "--model", str(pipeline["model"]),
                        "--features", str(synth_dir / manifest["features"]),
                        "--label-space", str(synth_dir / "synth0_labels.emb"),
                        "--k", "4"])
        assert code == 0
        out = capsys.readouterr().out
        assert out.count("cosine distance") == 4

    def test_predict_k_too_large_is_usage_error(self, synth_dir, pipeline, capsys):
        manifest = json.loads(
            (synth_dir / "synth0_test.jsonl").read_text().splitlines()[1]
        )
        code = run_cli(["predict", "--model", str(pipeline["model"]),
                        "--features", str(synth_dir / manifest["features"]),
                        "--label-space", str(synth_dir / "synth0_labels.emb"),
                        "--k", "99"])
        assert code == 1
        err = capsys.readouterr().err
        assert "99" in err and "12" in err  # names both k and N

    def test_graph_export(self, pipeline, tmp_path):
        dot = tmp_path / "graph.dot"
        assert run_cli(["graph", "--clusters", str(pipeline["clusters"]),
                        "--out", str(dot)]) == 0
        text = dot.read_text()
        assert text.startswith("graph")
        assert text.count("fillcolor") == 24


class TestExperimentCommand:
    def _write_spec(self, synth_dir, tmp_path, seed=3):
        manifests = {
            "synth0": {"train": "synth0_train.jsonl", "test": "synth0_test.jsonl"},
            "synth1": {"train": "synth1_train.jsonl", "test": "synth1_test.jsonl"},
        }
        spec = {
            "phase": "align_reg", "train": ["synth0", "synth1"],
            "test": ["synth0", "synth1"], "lam": 1.0, "seed": seed,
            "k": {"synth0": 4, "synth1": 4}, "manifests": manifests,
            "train_config": {"epochs": 6, "batch_size": 16, "lr": 3e-3},
            "projector": {"d_model": 16, "heads": 4, "ffn_mult": 2},
        }
        path = tmp_path / "exp.json"
        path.write_text(json.dumps(spec))
        return path

    def test_experiment_runs_and_is_deterministic(self, synth_dir, tmp_path):
        spec = self._write_spec(synth_dir, tmp_path)
        dir1, dir2 = tmp_path / "run1", tmp_path / "run2"
        for d in (dir1, dir2):
            d.mkdir()
            code = run_cli(["experiment", "--spec", str(spec),
                            "--data-root", str(synth_dir),
                            "--out", str(d / "report.json")])
            assert code == 0
        for name in ("report.json", "report.ckpt", "report.history.jsonl",
                     "report.clusters.json"):
            assert (dir1 / name).read_bytes() == (dir2 / name).read_bytes()

    def test_baseline1_spec_with_two_train_datasets_rejected(self, synth_dir, tmp_path):
        spec = json.loads(self._write_spec(synth_dir, tmp_path).read_text())
        spec["phase"] = "baseline1"
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(spec))
        code = run_cli(["experiment", "--spec", str(path),
                        "--data-root", str(synth_dir),
                        "--out", str(tmp_path / "r.json")])
        assert code == 2


class TestExitCodes:
    def test_missing_subcommand_is_usage_error(self, capsys):
        assert run_cli([]) == 1

    def test_unknown_flag_is_usage_error(self, capsys):
        assert run_cli(["cluster", "--nope"]) == 1

    def test_corrupt_model_is_data_error(self, synth_dir, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"NOTRIGHT" + bytes(32))
        code = run_cli(["eval", "--model", str(bad),
                        "--manifest", f"{synth_dir}/synth0_test.jsonl",
                        "--k", "2", "--out", str(tmp_path / "r.json")])
        assert code == 2

    def test_zero_norm_label_row_is_numeric_error(self, pipeline, synth_dir, tmp_path, capsys):
        rng = np.random.default_rng(0)
        bad_labels = tmp_path / "labels.emb"
        data = rng.standard_normal((3, 10))
        data[1] = 0.0
        write_embedding_matrix(
            EmbeddingMatrix(data=data, names=("a", "b", "c")), bad_labels
        )
        manifest = json.loads(
            (synth_dir / "synth0_test.jsonl").read_text().splitlines()[1]
        )
        code = run_cli(["predict", "--model", str(pipeline["model"]),
                        "--features", str(synth_dir / manifest["features"]),
                        "--label-space", str(bad_labels), "--k", "1"])
        assert code == 3
