import json
from pathlib import Path

import pytest

from imuvid.cli import main

SMALL_OVERRIDES = [
    "--set", "synth.num_classes=3",
    "--set", "synth.train_per_class=8",
    "--set", "synth.heldout_per_class=6",
    "--set", "synth.ood_per_class=6",
    "--set", "synth.frame_height=8",
    "--set", "synth.frame_width=8",
    "--set", "imu_encoder.model_dim=8",
    "--set", "imu_encoder.num_layers=1",
    "--set", "imu_encoder.num_heads=2",
    "--set", "imu_encoder.ff_dim=16",
    "--set", "imu_encoder.dropout=0.0",
    "--set", "video_encoder.frame_height=8",
    "--set", "video_encoder.frame_width=8",
    "--set", "video_encoder.model_dim=8",
    "--set", "video_encoder.num_layers=1",
    "--set", "video_encoder.num_heads=2",
    "--set", "video_encoder.ff_dim=16",
    "--set", "video_encoder.dropout=0.0",
    "--set", "align.proj_dim=8",
    "--set", "zeroshot.prototypes_per_class=2",
]


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    code = main(["synth-gen", "--out", str(out)] + SMALL_OVERRIDES)
    assert code == 0
    return out


@pytest.fixture(scope="module")
def cross_ckpt(dataset_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt") / "cross.ckpt"
    code = main([
        "pretrain", "--mode", "cross", "--data", str(dataset_dir / "manifest.tsv"),
        "--out", str(out), "--epochs", "1",
    ] + SMALL_OVERRIDES)
    assert code == 0
    return out


class TestSynthGen:
    def test_writes_manifest_and_echo(self, dataset_dir):
        assert (dataset_dir / "manifest.tsv").exists()
        assert (dataset_dir / "config.json").exists()

    def test_same_seed_identical_tree(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["synth-gen", "--out", str(out)] + SMALL_OVERRIDES) == 0
        files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        assert files_a == files_b
        for rel in files_a:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_rerun_from_echo_reproduces(self, dataset_dir, tmp_path):
        out = tmp_path / "redo"
        code = main([
            "synth-gen", "--config", str(dataset_dir / "config.json"), "--out", str(out)
        ])
        assert code == 0
        assert (out / "manifest.tsv").read_bytes() == (dataset_dir / "manifest.tsv").read_bytes()

    def test_bad_out_dir_exits_2(self, tmp_path, capsys):
        blocker = tmp_path / "blocker"
        blocker.write_text("file")
        code = main(["synth-gen", "--out", str(blocker)] + SMALL_OVERRIDES)
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_split_counts_reported(self, dataset_dir, capsys):
        out = dataset_dir.parent / "counted"
        main(["synth-gen", "--out", str(out)] + SMALL_OVERRIDES)
        summary = json.loads(capsys.readouterr().out)
        assert summary["per_split"]["train"] == 24
        assert summary["per_split"]["prototype"] == 6


class TestPretrain:
    def test_cross_zero_epochs_writes_init_checkpoint(self, dataset_dir, tmp_path):
        out = tmp_path / "init.ckpt"
        code = main([
            "pretrain", "--mode", "cross", "--data", str(dataset_dir / "manifest.tsv"),
            "--out", str(out), "--epochs", "0",
        ] + SMALL_OVERRIDES)
        assert code == 0
        assert out.exists()
        from imuvid.serialize import load_aligner

        aligner = load_aligner(out)
        assert aligner.model_ is not None

    def test_masked_loss_decreases(self, dataset_dir, tmp_path):
        out = tmp_path / "masked.ckpt"
        code = main([
            "pretrain", "--mode", "masked", "--data", str(dataset_dir / "manifest.tsv"),
            "--out", str(out), "--epochs", "4",
        ] + SMALL_OVERRIDES)
        assert code == 0
        records = [json.loads(l) for l in Path(str(out) + ".losses.jsonl".replace(".ckpt", "")).read_text().splitlines()] if False else [
            json.loads(l) for l in out.with_suffix(".losses.jsonl").read_text().splitlines()
        ]
        assert records[-1]["loss"] < records[0]["loss"]

    def test_supervised_mode(self, dataset_dir, tmp_path):
        out = tmp_path / "sup.ckpt"
        code = main([
            "pretrain", "--mode", "supervised", "--data", str(dataset_dir / "manifest.tsv"),
            "--out", str(out), "--epochs", "1",
        ] + SMALL_OVERRIDES)
        assert code == 0

    def test_missing_manifest_exits_2(self, tmp_path):
        code = main([
            "pretrain", "--mode", "masked", "--data", str(tmp_path / "nope.tsv"),
            "--out", str(tmp_path / "x.ckpt"),
        ])
        assert code == 2

    def test_cross_without_clips_exits_2(self, dataset_dir, tmp_path, capsys):
        # build a clip-less manifest from the existing one
        manifest = (dataset_dir / "manifest.tsv").read_text().splitlines()
        stripped = []
        for line in manifest:
            if line.startswith("#"):
                stripped.append(line)
            else:
                parts = line.split("\t")
                parts[2] = "-"
                stripped.append("\t".join(parts))
        noclips = dataset_dir / "noclips.tsv"
        noclips.write_text("\n".join(stripped) + "\n")
        code = main([
            "pretrain", "--mode", "cross", "--data", str(noclips),
            "--out", str(tmp_path / "x.ckpt"),
        ] + SMALL_OVERRIDES)
        assert code == 2
        assert "clip" in capsys.readouterr().err


class TestEvalZeroshot:
    def test_report_shape_and_reproducibility(self, dataset_dir, cross_ckpt, tmp_path, capsys):
        args = [
            "eval-zeroshot", "--ckpt", str(cross_ckpt),
            "--data", str(dataset_dir / "manifest.tsv"),
            "--repeats", "2", "--seed", "5",
        ] + SMALL_OVERRIDES
        assert main(args) == 0
        report_a = json.loads(capsys.readouterr().out)
        assert main(args) == 0
        report_b = json.loads(capsys.readouterr().out)
        assert report_a == report_b
        metrics = report_a["metrics"]
        assert set(metrics) == {"balanced_accuracy", "macro_f1", "mrr",
                                "recall_at_1", "recall_at_3"}
        for entry in metrics.values():
            assert {"mean", "std"} <= set(entry)

    def test_single_class_degenerate_gives_ba_1(self, tmp_path, capsys):
        # prototypes == dataset items, one class: balanced accuracy is 1 by construction
        out = tmp_path / "one"
        overrides = [s if s != "synth.num_classes=3" else "synth.num_classes=2"
                     for s in SMALL_OVERRIDES]
        assert main(["synth-gen", "--out", str(out)] + overrides) == 0
        capsys.readouterr()
        ckpt = tmp_path / "c.ckpt"
        assert main([
            "pretrain", "--mode", "cross", "--data", str(out / "manifest.tsv"),
            "--out", str(ckpt), "--epochs", "0",
        ] + overrides) == 0
        capsys.readouterr()

        # restrict manifest to class 0 only (heldout split), prototypes from the same items
        manifest = (out / "manifest.tsv").read_text().splitlines()
        kept = [l for l in manifest if l.startswith("#")]
        for line in manifest:
            if line.startswith("#"):
                continue
            parts = line.split("\t")
            if parts[3] == "activity0" and parts[4] == "heldout":
                kept.append(line)
                proto = parts.copy()
                proto[0] = "p-" + proto[0]
                proto[4] = "prototype"
                kept.append("\t".join(proto))
        single = out / "single.tsv"
        single.write_text("\n".join(kept) + "\n")
        assert main([
            "eval-zeroshot", "--ckpt", str(ckpt), "--data", str(single),
            "--prototypes", str(single), "--repeats", "2",
        ] + overrides) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["metrics"]["balanced_accuracy"]["mean"] == 1.0


class TestEvalFewshot:
    def test_labels_all_gives_four_rows(self, dataset_dir, cross_ckpt, tmp_path, capsys):
        # needs 100+20 per class: regenerate a larger ood split for this test
        big = tmp_path / "big"
        overrides = list(SMALL_OVERRIDES)
        overrides[overrides.index("synth.ood_per_class=6")] = "synth.ood_per_class=122"
        assert main(["synth-gen", "--out", str(big)] + overrides) == 0
        capsys.readouterr()
        code = main([
            "eval-fewshot", "--ckpt", str(cross_ckpt), "--data", str(big / "manifest.tsv"),
            "--mode", "probe", "--labels", "all", "--repeats", "2",
            "--set", "probe.epochs=1",
        ] + SMALL_OVERRIDES)
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert [row["labels_per_class"] for row in report["rows"]] == [10, 20, 50, 100]

    def test_probe_leaves_checkpoint_file_untouched(self, dataset_dir, cross_ckpt, capsys):
        before = cross_ckpt.read_bytes()
        code = main([
            "eval-fewshot", "--ckpt", str(cross_ckpt),
            "--data", str(dataset_dir / "manifest.tsv"),
            "--mode", "probe", "--labels", "10", "--repeats", "1",
            "--set", "probe.epochs=1", "--set", "fewshot.heldout_per_class=2",
        ] + SMALL_OVERRIDES)
        capsys.readouterr()
        assert code == 2 or code == 0  # insufficient samples allowed here
        assert cross_ckpt.read_bytes() == before

    def test_insufficient_samples_exits_2_naming_class(self, dataset_dir, cross_ckpt, capsys):
        code = main([
            "eval-fewshot", "--ckpt", str(cross_ckpt),
            "--data", str(dataset_dir / "manifest.tsv"),
            "--mode", "probe", "--labels", "100", "--repeats", "1",
        ] + SMALL_OVERRIDES)
        assert code == 2
        assert "class" in capsys.readouterr().err

    def test_scratch_mode_without_ckpt(self, dataset_dir, capsys):
        code = main([
            "eval-fewshot", "--data", str(dataset_dir / "manifest.tsv"),
            "--mode", "scratch", "--labels", "10", "--repeats", "1", "--split", "train",
            "--set", "supervised.epochs=1", "--set", "fewshot.heldout_per_class=2",
            "--set", "synth.ood_per_class=6",
        ] + SMALL_OVERRIDES)
        # train split has 8/class; 10+2 needed -> insufficient -> exit 2 with class name
        assert code == 2
        assert "class" in capsys.readouterr().err

    def test_probe_requires_ckpt(self, dataset_dir, capsys):
        code = main([
            "eval-fewshot", "--data", str(dataset_dir / "manifest.tsv"),
            "--mode", "probe", "--labels", "10",
        ])
        assert code == 2


class TestVerifyCommand:
    def test_metrics_suite_passes(self, capsys):
        assert main(["verify", "--suite", "metrics", "--cases", "40"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out

    def test_formats_suite_passes(self, capsys):
        assert main(["verify", "--suite", "formats", "--cases", "60"]) == 0

    def test_inject_fault_fails_with_exit_1(self, capsys):
        assert main(["verify", "--suite", "gradcheck", "--inject-fault"]) == 1
        assert "FAIL" in capsys.readouterr().out


def test_out_report_written_with_config_echo(dataset_dir, cross_ckpt, tmp_path):
    report_path = tmp_path / "runs" / "report.json"
    code = main([
        "eval-zeroshot", "--ckpt", str(cross_ckpt),
        "--data", str(dataset_dir / "manifest.tsv"),
        "--repeats", "1", "--out", str(report_path),
    ] + SMALL_OVERRIDES)
    assert code == 0
    assert report_path.exists()
    assert (report_path.parent / "config.json").exists()
    json.loads(report_path.read_text())


def test_reference_page_matches_generator():
    from pathlib import Path

    from imuvid.cli import generate_reference

    committed = Path(__file__).resolve().parent.parent / "docs" / "CLI.md"
    assert committed.read_text() == generate_reference()
