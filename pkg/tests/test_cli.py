"""Command-line behavior: exit codes, produced artifacts, chained workflow."""

import subprocess
import sys

import numpy as np
import pytest

from leafscope.cli import run
from leafscope.dataset import read_manifest
from leafscope.model import load_weights
from leafscope.preprocess import load_rgb, save_rgb
from leafscope.synthetic import generate_corpus
from oracles import parse_tsv


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    generate_corpus(root, num_classes=3, per_class=10, size=128, seed=42)
    return root


class TestUsageErrors:
    def test_no_arguments(self):
        assert run([]) == 2

    def test_unknown_command(self):
        assert run(["frobnicate"]) == 2

    def test_help_exits_zero(self, capsys):
        assert run(["--help"]) == 0
        assert "preprocess" in capsys.readouterr().out

    def test_bad_method_rejected_without_output(self, tmp_path, capsys):
        out = tmp_path / "overlay.png"
        code = run(["explain", "--model", "x.lsw", "--image", "y.png",
                    "--method", "eigencam", "--out", str(out)])
        assert code == 2
        assert not out.exists()
        err = capsys.readouterr().err
        for name in ("gradcam", "gradcam++", "layercam", "scorecam",
                     "faster-scorecam"):
            assert name in err

    def test_missing_required_flag(self):
        assert run(["split", "--input", "somewhere"]) == 2

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "leafscope.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert "leafscope" in proc.stdout


class TestRuntimeErrors:
    def test_missing_model_file(self, tmp_path, corpus):
        img = next((corpus / "class_00").glob("*.png"))
        code = run(["explain", "--model", str(tmp_path / "absent.lsw"),
                    "--image", str(img), "--method", "gradcam"])
        assert code == 1

    def test_evaluate_missing_manifest(self, tmp_path):
        code = run(["evaluate", "--model", str(tmp_path / "m.lsw"),
                    "--manifest", str(tmp_path / "none.tsv"),
                    "--images", str(tmp_path)])
        assert code == 1

    def test_preprocess_empty_input(self, tmp_path):
        (tmp_path / "empty").mkdir()
        code = run(["preprocess", "--input", str(tmp_path / "empty"),
                    "--output", str(tmp_path / "out")])
        assert code == 1

    def test_train_unsplit_manifest(self, tmp_path, corpus, capsys):
        p = tmp_path / "manifest.tsv"
        p.write_text("path\tclass_id\tclass_name\tsplit\n"
                     "class_00/img_000.png\t0\tclass_00\t\n")
        code = run(["train", "--manifest", str(p), "--images", str(corpus)])
        assert code == 1
        assert "unsplit" in capsys.readouterr().err

    def test_train_no_val_entries(self, tmp_path, capsys):
        root = tmp_path / "six"
        generate_corpus(root, num_classes=2, per_class=6, size=128, seed=0)
        manifest = tmp_path / "six.tsv"
        assert run(["split", "--input", str(root), "--manifest", str(manifest)]) == 0
        code = run(["train", "--manifest", str(manifest), "--images", str(root),
                    "--epochs", "1"])
        assert code == 1  # floor(0.1*6) = 0 validation images per class
        assert "no val entries" in capsys.readouterr().err


class TestPreprocessCommand:
    def test_mirrors_tree_as_png(self, tmp_path):
        src = tmp_path / "src"
        (src / "a" / "deep").mkdir(parents=True)
        rng = np.random.default_rng(0)
        save_rgb(src / "a" / "one.png", rng.integers(0, 256, (40, 40, 3), dtype=np.uint8))
        save_rgb(src / "a" / "deep" / "two.jpg",
                 rng.integers(0, 256, (56, 40, 3), dtype=np.uint8))
        (src / "a" / "ignore.txt").write_text("skip me")
        dst = tmp_path / "dst"
        code = run(["--quiet", "preprocess", "--input", str(src),
                    "--output", str(dst), "--size", "32", "--no-bg-removal"])
        assert code == 0
        assert sorted(p.relative_to(dst).as_posix() for p in dst.rglob("*.png")) == \
               ["a/deep/two.png", "a/one.png"]
        out = load_rgb(dst / "a" / "one.png")
        assert out.shape == (32, 32, 3)


class TestSplitCommand:
    def test_writes_valid_manifest(self, tmp_path, corpus, capsys):
        p = tmp_path / "manifest.tsv"
        assert run(["split", "--input", str(corpus), "--manifest", str(p)]) == 0
        out = capsys.readouterr().out
        assert "train/val/test = 24/3/3" in out
        m = read_manifest(p)
        assert len(m) == 30 and m.class_names == ["class_00", "class_01", "class_02"]

    def test_rerun_byte_identical(self, tmp_path, corpus):
        p1, p2 = tmp_path / "m1.tsv", tmp_path / "m2.tsv"
        assert run(["--quiet", "split", "--input", str(corpus), "--manifest", str(p1)]) == 0
        assert run(["--quiet", "split", "--input", str(corpus), "--manifest", str(p2)]) == 0
        assert p1.read_bytes() == p2.read_bytes()

    def test_seed_flag_changes_assignment(self, tmp_path, corpus):
        p1, p2 = tmp_path / "m1.tsv", tmp_path / "m2.tsv"
        run(["--quiet", "split", "--input", str(corpus), "--manifest", str(p1)])
        run(["--quiet", "split", "--input", str(corpus), "--manifest", str(p2),
             "--seed", "7"])
        a = [e.split for e in read_manifest(p1).entries]
        b = [e.split for e in read_manifest(p2).entries]
        assert a != b

    def test_quiet_silences_stdout(self, tmp_path, corpus, capsys):
        p = tmp_path / "m.tsv"
        assert run(["--quiet", "split", "--input", str(corpus), "--manifest", str(p)]) == 0
        assert capsys.readouterr().out == ""


class TestChain:
    """split -> train -> evaluate -> explain on one small corpus."""

    def test_full_workflow(self, tmp_path, corpus):
        manifest = tmp_path / "manifest.tsv"
        model = tmp_path / "model.lsw"
        history = tmp_path / "history.tsv"
        report = tmp_path / "report.tsv"
        overlay = tmp_path / "overlay.png"
        heat = tmp_path / "heat.tsv"

        assert run(["--quiet", "split", "--input", str(corpus),
                    "--manifest", str(manifest)]) == 0
        assert run(["--quiet", "train", "--manifest", str(manifest),
                    "--images", str(corpus), "--epochs", "1",
                    "--out", str(model), "--history", str(history)]) == 0

        g = load_weights(model)
        assert g.params["logits.W"].shape == (3, 512)
        header, rows = parse_tsv(history)
        assert header == ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]
        assert len(rows) == 1

        assert run(["--quiet", "evaluate", "--model", str(model),
                    "--manifest", str(manifest), "--images", str(corpus),
                    "--split", "val", "--report", str(report)]) == 0
        header, rows = parse_tsv(report)
        assert header == ["class", "precision", "recall", "f1", "support"]
        assert rows[-1][0] == "accuracy"
        assert 0.0 <= float(rows[-1][1]) <= 1.0

        img = next((corpus / "class_01").glob("*.png"))
        assert run(["--quiet", "explain", "--model", str(model),
                    "--image", str(img), "--method", "faster-scorecam",
                    "--top-k", "4", "--out", str(overlay),
                    "--heatmap-tsv", str(heat)]) == 0
        rgb = load_rgb(overlay)
        assert rgb.shape == (128, 128, 3)
        values = np.loadtxt(heat, delimiter="\t")
        assert values.shape == (128, 128)
        assert values.min() >= 0.0 and values.max() <= 1.0

    def test_explain_rejects_bad_class_and_layer(self, tmp_path, corpus):
        manifest = tmp_path / "manifest.tsv"
        model = tmp_path / "model.lsw"
        run(["--quiet", "split", "--input", str(corpus), "--manifest", str(manifest)])
        assert run(["--quiet", "train", "--manifest", str(manifest),
                    "--images", str(corpus), "--epochs", "1",
                    "--out", str(model), "--history",
                    str(tmp_path / "history.tsv")]) == 0
        img = next((corpus / "class_00").glob("*.png"))
        base = ["--quiet", "explain", "--model", str(model), "--image", str(img),
                "--out", str(tmp_path / "o.png")]
        assert run(base + ["--method", "gradcam", "--class", "99"]) == 1
        assert run(base + ["--method", "gradcam", "--class", "maybe"]) == 1
        assert run(base + ["--method", "gradcam", "--layer", "fc1"]) == 1
        assert run(base + ["--method", "gradcam", "--class", "2"]) == 0
