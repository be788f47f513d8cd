"""End-to-end tests driving the command line in process."""

import json

import numpy as np

from dfkit import cli, data, fusion, metrics, models

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def run(capsys, argv):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_config(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def small_train_config(**overrides):
    payload = {
        "seed": 7,
        "data": {"synth": {"n_real": 60, "n_fake": 60, "dim": 5, "separation": 5.0}},
        "model": {"embed_dim": 5, "head_hidden": 4},
        "train": {"learning_rate": 0.002, "batch_size": 16, "max_epochs": 3},
    }
    payload.update(overrides)
    return payload


def stats_without_wall_time(path):
    rows = []
    for line in path.read_text(encoding="utf-8").splitlines():
        row = json.loads(line)
        row.pop("wall_time_s")
        rows.append(row)
    return rows


def hand_eval_inputs(tmp_path):
    """Ten test samples hitting tp=3 fp=1 tn=5 fn=1 at threshold 0.5."""
    scores = [0.9, 0.8, 0.6, 0.2, 0.7, 0.4, 0.3, 0.2, 0.1, 0.05]
    labels = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0]
    records = [
        data.SampleRecord(
            sample_id=f"t{i}", label=labels[i], split="test",
            inline=np.array([float(i)]),
        )
        for i in range(10)
    ]
    manifest_path = tmp_path / "hand.txt"
    data.write_manifest(data.DatasetManifest(records=tuple(records)), manifest_path)
    scores_path = tmp_path / "hand_scores.csv"
    member = fusion.ScoreSet(
        model_id="hand", scores={f"t{i}": scores[i] for i in range(10)}
    )
    fusion.write_scores(scores_path, member)
    return str(manifest_path), str(scores_path), scores, labels


class TestSynth:
    def test_writes_manifest(self, tmp_path, capsys):
        out = tmp_path / "m.txt"
        code, stdout, stderr = run(capsys, ["synth", "--out", str(out), "--seed", "3"])
        assert code == 0 and stderr == ""
        assert f"wrote {out} (256 samples: 128 real, 128 fake)" in stdout
        manifest = data.load_manifest(out)
        assert len(manifest.records) == 256

    def test_rerun_is_byte_identical(self, tmp_path, capsys):
        paths = [tmp_path / "a.txt", tmp_path / "b.txt"]
        for path in paths:
            code, _, _ = run(capsys, ["synth", "--out", str(path), "--seed", "11"])
            assert code == 0
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_unbalanced_counts_give_round_class_weight(self, tmp_path, capsys):
        out = tmp_path / "u.txt"
        code, _, _ = run(
            capsys,
            ["synth", "--out", str(out), "--seed", "0",
             "--n-real", "100", "--n-fake", "500"],
        )
        assert code == 0
        manifest = data.load_manifest(out)
        counts = manifest.split_counts("train")
        assert data.class_weight(counts["real"], counts["fake"]) == 5.0

    def test_overwrite_guard(self, tmp_path, capsys):
        out = tmp_path / "m.txt"
        assert run(capsys, ["synth", "--out", str(out)])[0] == 0
        code, _, stderr = run(capsys, ["synth", "--out", str(out)])
        assert code == 1
        assert "refusing to overwrite" in stderr
        assert run(capsys, ["synth", "--out", str(out), "--overwrite"])[0] == 0

    def test_bad_split_fractions(self, tmp_path, capsys):
        code, _, stderr = run(
            capsys,
            ["synth", "--out", str(tmp_path / "m.txt"),
             "--split-fractions", "0.9", "0.9", "0.9"],
        )
        assert code == 1
        assert "dfkit: error:" in stderr


class TestTrain:
    def test_run_directory_contents(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "cfg.json", small_train_config())
        out_dir = tmp_path / "run"
        code, stdout, stderr = run(
            capsys, ["train", "--config", cfg, "--out-dir", str(out_dir)]
        )
        assert code == 0 and stderr == ""
        for name in ("config.json", "manifest.txt", "stats.jsonl", "final.npz",
                     "best.npz", "history.png"):
            assert (out_dir / name).exists(), name
        assert "best epoch" in stdout
        assert (out_dir / "history.png").read_bytes().startswith(PNG_MAGIC)
        stats = stats_without_wall_time(out_dir / "stats.jsonl")
        assert [row["epoch"] for row in stats] == [1, 2, 3]
        snapshot = json.loads((out_dir / "config.json").read_text())
        assert snapshot["train"]["max_epochs"] == 3
        assert snapshot["model"]["input_shape"] == [5]

    def test_reruns_reproduce_stats(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "cfg.json", small_train_config())
        dirs = [tmp_path / "r1", tmp_path / "r2"]
        for out_dir in dirs:
            assert run(capsys, ["train", "--config", cfg, "--out-dir", str(out_dir)])[0] == 0
        assert (
            stats_without_wall_time(dirs[0] / "stats.jsonl")
            == stats_without_wall_time(dirs[1] / "stats.jsonl")
        )
        assert (dirs[0] / "config.json").read_bytes() == (dirs[1] / "config.json").read_bytes()
        assert (dirs[0] / "manifest.txt").read_bytes() == (dirs[1] / "manifest.txt").read_bytes()

    def test_empty_train_split(self, tmp_path, capsys):
        payload = small_train_config()
        payload["data"]["synth"]["split_fractions"] = [0.0, 0.5, 0.5]
        cfg = write_config(tmp_path, "cfg.json", payload)
        code, _, stderr = run(capsys, ["train", "--config", cfg, "--out-dir", str(tmp_path / "r")])
        assert code == 2
        assert "train split empty" in stderr

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "cfg.json", {**small_train_config(), "oops": 1})
        code, _, stderr = run(capsys, ["train", "--config", cfg, "--out-dir", str(tmp_path / "r")])
        assert code == 1
        assert "unknown config key" in stderr and "'oops'" in stderr

    def test_invalid_json(self, tmp_path, capsys):
        path = tmp_path / "cfg.json"
        path.write_text("{not json", encoding="utf-8")
        code, _, stderr = run(
            capsys, ["train", "--config", str(path), "--out-dir", str(tmp_path / "r")]
        )
        assert code == 1
        assert "invalid JSON" in stderr

    def test_missing_data_source(self, tmp_path, capsys):
        payload = small_train_config()
        del payload["data"]
        cfg = write_config(tmp_path, "cfg.json", payload)
        code, _, stderr = run(capsys, ["train", "--config", cfg, "--out-dir", str(tmp_path / "r")])
        assert code == 1
        assert "no data source" in stderr

    def test_ambiguous_data_source(self, tmp_path, capsys):
        payload = small_train_config()
        payload["data"]["manifest"] = "somewhere.txt"
        cfg = write_config(tmp_path, "cfg.json", payload)
        code, _, stderr = run(capsys, ["train", "--config", cfg, "--out-dir", str(tmp_path / "r")])
        assert code == 1
        assert "ambiguous data source" in stderr

    def test_manifest_source_requires_input_shape(self, tmp_path, capsys):
        manifest_path = tmp_path / "m.txt"
        assert run(capsys, ["synth", "--out", str(manifest_path), "--dim", "5"])[0] == 0
        payload = small_train_config()
        del payload["data"]
        cfg = write_config(tmp_path, "cfg.json", payload)
        code, _, stderr = run(
            capsys,
            ["train", "--config", cfg, "--manifest", str(manifest_path),
             "--out-dir", str(tmp_path / "r")],
        )
        assert code == 1
        assert "model.input_shape is required" in stderr


def zero_head_checkpoint(tmp_path, dim=5):
    spec = models.BackboneSpec(kind="toy_mlp", input_shape=(dim,), embed_dim=4, seed=0)
    model = models.build_model(spec, head_hidden=3, seed=0, model_id="zero")
    model.set_parameters({
        name: np.zeros_like(arr)
        for name, arr in model.param_dict().items()
        if name.startswith("head.")
    })
    path = tmp_path / "zero.npz"
    models.save_checkpoint(model, path)
    return str(path)


class TestPredict:
    def test_zero_head_scores_half(self, tmp_path, capsys):
        manifest_path = tmp_path / "m.txt"
        assert run(capsys, ["synth", "--out", str(manifest_path), "--dim", "5"])[0] == 0
        checkpoint = zero_head_checkpoint(tmp_path)
        out = tmp_path / "scores.csv"
        code, stdout, _ = run(
            capsys,
            ["predict", "--checkpoint", checkpoint, "--manifest", str(manifest_path),
             "--split", "test", "--out", str(out)],
        )
        assert code == 0
        loaded = fusion.read_scores(out)
        manifest = data.load_manifest(manifest_path)
        n_test = len(manifest.split_records("test"))
        assert len(loaded.scores) == n_test
        assert set(loaded.scores.values()) == {0.5}
        assert loaded.model_id == "zero"
        assert f"({n_test} scores, model zero)" in stdout

    def test_rerun_is_byte_identical(self, tmp_path, capsys):
        manifest_path = tmp_path / "m.txt"
        assert run(capsys, ["synth", "--out", str(manifest_path), "--dim", "5"])[0] == 0
        checkpoint = zero_head_checkpoint(tmp_path)
        outs = [tmp_path / "a.csv", tmp_path / "b.csv"]
        for out in outs:
            args = ["predict", "--checkpoint", checkpoint,
                    "--manifest", str(manifest_path), "--out", str(out)]
            assert run(capsys, args)[0] == 0
        assert outs[0].read_bytes() == outs[1].read_bytes()

    def test_shape_mismatch(self, tmp_path, capsys):
        manifest_path = tmp_path / "m.txt"
        assert run(capsys, ["synth", "--out", str(manifest_path), "--dim", "4"])[0] == 0
        checkpoint = zero_head_checkpoint(tmp_path, dim=5)
        code, _, stderr = run(
            capsys,
            ["predict", "--checkpoint", checkpoint, "--manifest", str(manifest_path),
             "--out", str(tmp_path / "s.csv")],
        )
        assert code == 2
        assert "input shape" in stderr

    def test_missing_checkpoint(self, tmp_path, capsys):
        code, _, stderr = run(
            capsys,
            ["predict", "--checkpoint", str(tmp_path / "none.npz"),
             "--manifest", str(tmp_path / "m.txt"), "--out", str(tmp_path / "s.csv")],
        )
        assert code == 2
        assert "dfkit: error:" in stderr


class TestFuse:
    def member_files(self, tmp_path, values):
        paths = []
        for model_id, scores in values.items():
            path = tmp_path / f"{model_id}.csv"
            fusion.write_scores(path, fusion.ScoreSet(model_id=model_id, scores=scores))
            paths.append(str(path))
        return paths

    def test_three_member_mean(self, tmp_path, capsys):
        paths = self.member_files(
            tmp_path,
            {"a": {"x": 0.9, "y": 0.3}, "b": {"x": 0.8, "y": 0.2}, "c": {"x": 0.7, "y": 0.1}},
        )
        out = tmp_path / "fused.csv"
        code, stdout, _ = run(capsys, ["fuse", *paths, "--out", str(out)])
        assert code == 0
        fused = fusion.read_scores(out)
        assert isinstance(fused, fusion.FusedScores)
        assert fused.member_ids == ("a", "b", "c")
        assert fused.scores["x"] == 0.8
        assert "(2 scores, 3 members)" in stdout

    def test_single_member_identity(self, tmp_path, capsys):
        paths = self.member_files(tmp_path, {"solo": {"x": 0.25, "y": 0.75}})
        out = tmp_path / "fused.csv"
        assert run(capsys, ["fuse", *paths, "--out", str(out)])[0] == 0
        fused = fusion.read_scores(out)
        assert fused.scores == {"x": 0.25, "y": 0.75}
        assert fused.member_ids == ("solo",)

    def test_coverage_mismatch(self, tmp_path, capsys):
        paths = self.member_files(
            tmp_path, {"a": {"x": 0.9, "y": 0.3}, "b": {"x": 0.8, "z": 0.2}}
        )
        code, _, stderr = run(capsys, ["fuse", *paths, "--out", str(tmp_path / "f.csv")])
        assert code == 2
        assert "'a'" in stderr and "'b'" in stderr
        assert "y" in stderr and "z" in stderr

    def test_overwrite_guard(self, tmp_path, capsys):
        paths = self.member_files(tmp_path, {"a": {"x": 0.5}})
        out = tmp_path / "f.csv"
        assert run(capsys, ["fuse", *paths, "--out", str(out)])[0] == 0
        code, _, stderr = run(capsys, ["fuse", *paths, "--out", str(out)])
        assert code == 1
        assert "refusing to overwrite" in stderr


class TestEval:
    def test_hand_confusion_report(self, tmp_path, capsys):
        manifest_path, scores_path, scores, labels = hand_eval_inputs(tmp_path)
        out_dir = tmp_path / "eval"
        code, stdout, _ = run(
            capsys,
            ["eval", "--scores", scores_path, "--manifest", manifest_path,
             "--split", "test", "--out-dir", str(out_dir)],
        )
        assert code == 0
        report_text = (out_dir / "report.txt").read_text(encoding="utf-8")
        assert "tp: 3" in report_text and "fp: 1" in report_text
        assert "tn: 5" in report_text and "fn: 1" in report_text
        assert "f1_fake: 75.0" in report_text
        assert "accuracy: 80.0" in report_text
        assert report_text in stdout
        expected = metrics.format_eval_row(
            "hand", metrics.evaluate(scores, labels, threshold=0.5)
        )
        assert (out_dir / "row.txt").read_text(encoding="utf-8") == expected + "\n"
        assert (out_dir / "roc.png").read_bytes().startswith(PNG_MAGIC)

    def test_perfect_scores(self, tmp_path, capsys):
        records = [
            data.SampleRecord(sample_id=f"p{i}", label=i % 2, split="test",
                              inline=np.array([float(i)]))
            for i in range(8)
        ]
        manifest_path = tmp_path / "perfect.txt"
        data.write_manifest(data.DatasetManifest(records=tuple(records)), manifest_path)
        scores_path = tmp_path / "perfect.csv"
        fusion.write_scores(
            scores_path,
            fusion.ScoreSet(
                model_id="m", scores={f"p{i}": 0.9 if i % 2 else 0.1 for i in range(8)}
            ),
        )
        out_dir = tmp_path / "eval"
        code, stdout, _ = run(
            capsys,
            ["eval", "--scores", str(scores_path), "--manifest", str(manifest_path),
             "--out-dir", str(out_dir)],
        )
        assert code == 0
        report_text = (out_dir / "report.txt").read_text(encoding="utf-8")
        assert "auc: 100.0" in report_text
        assert "eer: 0.0" in report_text

    def test_rerun_is_byte_identical(self, tmp_path, capsys):
        manifest_path, scores_path, _, _ = hand_eval_inputs(tmp_path)
        dirs = [tmp_path / "e1", tmp_path / "e2"]
        for out_dir in dirs:
            args = ["eval", "--scores", scores_path, "--manifest", manifest_path,
                    "--out-dir", str(out_dir)]
            assert run(capsys, args)[0] == 0
        for name in ("report.txt", "row.txt", "roc.png"):
            assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes(), name

    def test_threshold_flag(self, tmp_path, capsys):
        manifest_path, scores_path, _, _ = hand_eval_inputs(tmp_path)
        out_dir = tmp_path / "eval"
        code, _, _ = run(
            capsys,
            ["eval", "--scores", scores_path, "--manifest", manifest_path,
             "--threshold", "0.7", "--out-dir", str(out_dir)],
        )
        assert code == 0
        report_text = (out_dir / "report.txt").read_text(encoding="utf-8")
        assert "threshold: 0.7" in report_text
        assert "tp: 2" in report_text and "fp: 1" in report_text

    def test_config_threshold_used_when_flag_absent(self, tmp_path, capsys):
        manifest_path, scores_path, _, _ = hand_eval_inputs(tmp_path)
        cfg = write_config(tmp_path, "cfg.json", {"eval": {"threshold": 0.7}})
        out_dir = tmp_path / "eval"
        code, _, _ = run(
            capsys,
            ["eval", "--config", cfg, "--scores", scores_path,
             "--manifest", manifest_path, "--out-dir", str(out_dir)],
        )
        assert code == 0
        assert "tp: 2" in (out_dir / "report.txt").read_text(encoding="utf-8")

    def test_coverage_mismatch(self, tmp_path, capsys):
        manifest_path, _, _, _ = hand_eval_inputs(tmp_path)
        partial = tmp_path / "partial.csv"
        fusion.write_scores(
            partial,
            fusion.ScoreSet(model_id="m", scores={f"t{i}": 0.5 for i in range(9)}),
        )
        code, _, stderr = run(
            capsys,
            ["eval", "--scores", str(partial), "--manifest", manifest_path,
             "--out-dir", str(tmp_path / "e")],
        )
        assert code == 2
        assert "score coverage mismatch" in stderr and "t9" in stderr

    def test_fused_scores_name_members(self, tmp_path, capsys):
        manifest_path, scores_path, _, _ = hand_eval_inputs(tmp_path)
        fused_path = tmp_path / "fused.csv"
        assert run(capsys, ["fuse", scores_path, scores_path, "--out", str(fused_path)])[0] == 0
        out_dir = tmp_path / "eval"
        code, stdout, _ = run(
            capsys,
            ["eval", "--scores", str(fused_path), "--manifest", manifest_path,
             "--out-dir", str(out_dir)],
        )
        assert code == 0
        report_text = (out_dir / "report.txt").read_text(encoding="utf-8")
        assert report_text.startswith("members: hand, hand\n")
        assert (out_dir / "row.txt").read_text(encoding="utf-8").startswith("hand + hand & ")


class TestProfile:
    def test_row_shape_and_stability(self, tmp_path, capsys):
        checkpoint = zero_head_checkpoint(tmp_path)
        rows = []
        for _ in range(2):
            code, stdout, _ = run(
                capsys, ["profile", "--checkpoint", checkpoint, "--name", "tiny"]
            )
            assert code == 0
            rows.append(stdout.strip())
        first = rows[0].split(" & ")
        second = rows[1].split(" & ")
        assert len(first) == 4
        assert first[0] == "tiny"
        # Latency (third column) may vary; identity columns may not.
        assert (first[0], first[1], first[3]) == (second[0], second[1], second[3])


class TestUsage:
    def test_unknown_subcommand(self, capsys):
        code, _, stderr = run(capsys, ["frobnicate"])
        assert code == 1
        assert "dfkit: error:" in stderr

    def test_missing_required_flag(self, capsys):
        code, _, stderr = run(capsys, ["synth"])
        assert code == 1
        assert "dfkit: error:" in stderr


class TestPipeline:
    def test_fused_model_tracks_best_member(self, tmp_path, capsys):
        """Train three seeds on one dataset, fuse their test scores, and
        check the ensemble stays within 0.02 AUC of its best member."""
        score_paths = []
        for k in range(3):
            payload = {
                "data": {
                    "synth": {
                        "seed": 4242, "n_real": 120, "n_fake": 120, "dim": 6,
                        "separation": 2.5, "split_fractions": [0.5, 0.2, 0.3],
                    }
                },
                "model": {"embed_dim": 6, "head_hidden": 6, "seed": 100 + k,
                          "model_id": f"m{k}"},
                "train": {"learning_rate": 0.005, "batch_size": 16,
                          "max_epochs": 3, "seed": 200 + k,
                          "early_stop_patience": None},
            }
            cfg = write_config(tmp_path, f"cfg{k}.json", payload)
            run_dir = tmp_path / f"run{k}"
            assert run(capsys, ["train", "--config", cfg, "--out-dir", str(run_dir)])[0] == 0
            score_path = tmp_path / f"s{k}.csv"
            args = ["predict", "--checkpoint", str(run_dir / "best.npz"),
                    "--manifest", str(run_dir / "manifest.txt"),
                    "--split", "test", "--out", str(score_path)]
            assert run(capsys, args)[0] == 0
            score_paths.append(str(score_path))

        fused_path = tmp_path / "fused.csv"
        assert run(capsys, ["fuse", *score_paths, "--out", str(fused_path)])[0] == 0

        manifest = data.load_manifest(tmp_path / "run0" / "manifest.txt")
        records = manifest.split_records("test")
        labels = [rec.label for rec in records]

        def auc_of(path):
            loaded = fusion.read_scores(path)
            vector = [loaded.scores[rec.sample_id] for rec in records]
            return metrics.auc(metrics.roc_curve(vector, labels))

        member_aucs = [auc_of(path) for path in score_paths]
        assert auc_of(fused_path) >= max(member_aucs) - 0.02

        out_dir = tmp_path / "eval"
        args = ["eval", "--scores", str(fused_path),
                "--manifest", str(tmp_path / "run0" / "manifest.txt"),
                "--split", "test", "--out-dir", str(out_dir)]
        assert run(capsys, args)[0] == 0
        row = (out_dir / "row.txt").read_text(encoding="utf-8").strip()
        assert row.startswith("m0 + m1 + m2 & ")
        assert len(row.split(" & ")) == 6
