import filecmp
import os
import subprocess
import sys

import numpy as np
import pytest

from terrainseg import cli
from terrainseg.featureset import read_csv
from terrainseg.imaging import read_pnm
from terrainseg.pipeline import Classifier, PipelineConfig


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def corpus(small_corpus):
    out, tr, te = small_corpus
    return out, tr, te


@pytest.fixture(scope="module")
def train_csv(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("pre") / "train.csv"
    assert run("preprocess", corpus[1], "-o", out) == 0
    return out


class TestExitCodes:
    def test_no_command_is_usage(self):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == 1

    def test_unknown_flag_is_usage(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["extract", "--bogus", "x.ppm"])
        assert exc.value.code == 1

    def test_bad_jobs_is_usage(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--jobs", "0", "synth", str(tmp_path)])
        assert exc.value.code == 1

    def test_bad_structure_is_usage(self, train_csv, tmp_path, capsys):
        assert run("train", train_csv, "-o", tmp_path / "m", "--classifier", "mlp", "--structure", "36-x") == 1

    def test_bad_config_is_usage(self, tmp_path, corpus):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"variant": "SURF128"}')
        assert run("--config", cfg, "extract", corpus[0] / "test_000.ppm", "--out-dir", tmp_path) == 1

    def test_unreadable_file_is_data_error(self, tmp_path, capsys):
        missing = tmp_path / "missing.ppm"
        assert run("extract", missing, "--out-dir", tmp_path) == 2
        assert str(missing) in capsys.readouterr().err

    def test_empty_manifest_is_data_error(self, tmp_path, capsys):
        (tmp_path / "m.tsv").write_text("")
        assert run("preprocess", tmp_path / "m.tsv", "-o", tmp_path / "x.csv") == 2
        assert "empty manifest" in capsys.readouterr().err

    def test_missing_class_is_data_error(self, tmp_path, train_csv):
        fs = read_csv(train_csv)
        keep = fs.labels != 1
        from terrainseg.featureset import FeatureSet, write_csv

        write_csv(tmp_path / "sub.csv", FeatureSet(fs.points[keep], fs.descriptors[keep], fs.labels[keep]))
        assert run("train", tmp_path / "sub.csv", "-o", tmp_path / "m", "--classifier", "svm") == 2

    def test_numerical_failure(self, tmp_path, train_csv, capsys):
        # an unreachable tolerance exhausts the SMO iteration budget
        code = run("train", train_csv, "-o", tmp_path / "m", "--classifier", "svm", "--tol", "1e-300", "--gamma", "1e-12", "--C", "1e12")
        assert code == 3
        assert "numerical failure" in capsys.readouterr().err


class TestCommands:
    def test_extract_cap_and_determinism(self, corpus, tmp_path):
        out, _, _ = corpus
        img = tmp_path / "big.ppm"
        assert run("synth", tmp_path / "s", "--train", 1, "--test", 0) == 0
        os.replace(tmp_path / "s" / "train_000.ppm", img)
        assert run("extract", img, "-o", tmp_path / "a.csv") == 0
        assert run("extract", img, "-o", tmp_path / "b.csv") == 0
        assert filecmp.cmp(tmp_path / "a.csv", tmp_path / "b.csv", shallow=False)
        fs = read_csv(tmp_path / "a.csv")
        assert 0 < len(fs) <= 768 and fs.dim == 36

    def test_extract_many_with_jobs(self, corpus, tmp_path):
        imgs = sorted(str(p) for p in corpus[0].glob("train_00[0-2].ppm"))
        assert run("--jobs", 2, "extract", *imgs, "--out-dir", tmp_path) == 0
        assert sorted(os.listdir(tmp_path)) == ["train_000.csv", "train_001.csv", "train_002.csv"]

    def test_preprocess_drop_and_dense_split(self, corpus, tmp_path):
        assert run("preprocess", corpus[1], "-o", tmp_path / "all.csv", "--keep-outliers") == 0
        assert run("preprocess", corpus[1], "-o", tmp_path / "p.csv", "--drop-fraction", 0.10, "--dense-split", 5) == 0
        full = read_csv(tmp_path / "all.csv").class_sizes()
        kept = read_csv(tmp_path / "p.csv")
        assert len(kept) == int(np.sum(full - np.floor(0.10 * full)))
        dense, sparse = read_csv(tmp_path / "p_dense.csv"), read_csv(tmp_path / "p_nondense.csv")
        assert len(dense) + len(sparse) == len(kept)

    def test_train_knn_embeds_set(self, train_csv, tmp_path, capsys):
        assert run("train", train_csv, "-o", tmp_path / "knn.txt", "--classifier", "knn") == 0
        clf = Classifier.load(tmp_path / "knn.txt")
        assert clf.model.n == len(read_csv(train_csv))

    def test_train_mlp_parameter_count(self, train_csv, tmp_path, capsys):
        assert run("train", train_csv, "-o", tmp_path / "m.json", "--classifier", "mlp", "--structure", "36-60-60-5", "--epochs", 3) == 0
        assert "parameters=6185" in capsys.readouterr().out

    def test_grid_search_table_shape(self, train_csv, tmp_path):
        fs = read_csv(train_csv)
        from terrainseg.featureset import FeatureSet, write_csv

        idx = np.concatenate([np.flatnonzero(fs.labels == c)[:12] for c in range(5)])
        write_csv(tmp_path / "s.csv", FeatureSet(fs.points[idx], fs.descriptors[idx], fs.labels[idx]))
        assert run("grid-search", tmp_path / "s.csv", "-o", tmp_path / "g.csv", "--skip", "16,2") == 0
        lines = (tmp_path / "g.csv").read_text().splitlines()
        assert lines[0] == "gamma\\C," + ",".join(f"2^{e}" for e in range(-1, 8))
        assert [ln.split(",")[0] for ln in lines[1:]] == [f"2^{e}" for e in range(-4, 6)]
        assert lines[1 + 8].split(",")[1 + 2] == "*"

    def test_classify_writes_scores(self, train_csv, tmp_path, capsys):
        assert run("train", train_csv, "-o", tmp_path / "svm.json", "--classifier", "svm") == 0
        assert run("classify", tmp_path / "svm.json", train_csv, "-o", tmp_path / "c.csv") == 0
        out = capsys.readouterr().out
        assert "error=" in out
        rows = (tmp_path / "c.csv").read_text().splitlines()
        assert rows[0] == "index,class,s0,s1,s2,s3,s4"
        assert len(rows) == len(read_csv(train_csv)) + 1

    def test_segment_outputs(self, corpus, train_csv, tmp_path):
        assert run("train", train_csv, "-o", tmp_path / "knn.txt", "--classifier", "knn") == 0
        img = corpus[0] / "test_000.ppm"
        assert run("segment", tmp_path / "knn.txt", img, "--out-dir", tmp_path) == 0
        overlay = read_pnm(tmp_path / "test_000_overlay.ppm")
        labels = read_pnm(tmp_path / "test_000_labels.pgm")
        assert overlay.shape == (240, 320, 3) and labels.shape == (240, 320)
        assert set(np.unique(labels).tolist()) <= {0, 1, 2, 3, 4, 255}

    def test_knn_k1_on_training_images(self, corpus, tmp_path, capsys):
        assert run("preprocess", corpus[1], "-o", tmp_path / "all.csv", "--keep-outliers") == 0
        assert run("train", tmp_path / "all.csv", "-o", tmp_path / "k1.txt", "--classifier", "knn", "--k", 1) == 0
        assert run("evaluate", tmp_path / "k1.txt", corpus[1], "-o", tmp_path / "r.csv") == 0
        row = (tmp_path / "r.csv").read_text().splitlines()[1].split(",")
        assert float(row[-2]) <= 1.0

    def test_evaluate_pixel(self, corpus, train_csv, tmp_path):
        assert run("train", train_csv, "-o", tmp_path / "knn.txt", "--classifier", "knn") == 0
        assert run("evaluate", tmp_path / "knn.txt", corpus[2], "-o", tmp_path / "r.csv", "--pixel", "--label", "X") == 0
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "label,img01,img02,mean,std"
        assert [ln.split(",")[0] for ln in lines[1:]] == ["X", "X-pixel"]

    @pytest.mark.parametrize("method", ["pca", "bottleneck"])
    def test_reduce(self, train_csv, tmp_path, method):
        assert run("reduce", train_csv, "-o", tmp_path / "r.csv", "--method", method, "--epochs", 20, "--dense-split", 5) == 0
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "c0,c1,c2,label"
        assert len(lines) - 1 == len(read_csv(train_csv))
        assert all(len(ln.split(",")) == 4 for ln in lines)
        n_dense = len((tmp_path / "r_dense.csv").read_text().splitlines()) - 1
        n_sparse = len((tmp_path / "r_nondense.csv").read_text().splitlines()) - 1
        assert n_dense + n_sparse == len(lines) - 1

    def test_config_flag_overrides(self, tmp_path, corpus):
        PipelineConfig(variant="SURF64").save(tmp_path / "c.json")
        img = corpus[0] / "test_000.ppm"
        assert run("--config", tmp_path / "c.json", "extract", img, "-o", tmp_path / "a.csv") == 0
        assert read_csv(tmp_path / "a.csv").dim == 64
        assert run("--config", tmp_path / "c.json", "extract", img, "-o", tmp_path / "b.csv", "--variant", "USURF32") == 0
        assert read_csv(tmp_path / "b.csv").dim == 32

    def test_global_flags_after_subcommand(self, tmp_path):
        assert run("synth", tmp_path / "a", "--train", 1, "--test", 0, "--width", 64, "--height", 48, "--seed", 5) == 0
        assert run("--seed", 5, "synth", tmp_path / "b", "--train", 1, "--test", 0, "--width", 64, "--height", 48) == 0
        assert filecmp.cmp(tmp_path / "a" / "train_000.ppm", tmp_path / "b" / "train_000.ppm", shallow=False)


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "terrainseg.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for name in ("extract", "preprocess", "train", "grid-search", "classify", "segment", "evaluate", "reduce", "synth"):
        assert name in r.stdout
    for flag in ("--config", "--seed", "--jobs", "--verbose"):
        assert flag in r.stdout
