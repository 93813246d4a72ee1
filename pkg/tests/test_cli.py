import filecmp
import json
import subprocess
import sys

import numpy as np
import pytest

from groundnmf import generate, i_divergence, io, sparsity
from groundnmf.cli import main
from groundnmf.config import load_config

CONFIG = {
    "seed": 5,
    "deterministic": True,
    "solver": {"lam": 8.0, "n_restarts": 1, "max_outer_iters": 40},
    "gen": {"d": 20, "N": 60, "K": 3, "lam": 8.0, "phenotype_support_size": 5,
            "label_rule": {"scale": 4.0, "noise": 0.1}},
    "eval": {"n_folds": 3, "strength_grid": [0.1, 1.0]},
}


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(same_tree(a / d, b / d) for d in cmp.common_dirs)


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "config.json").write_text(json.dumps(CONFIG))
    cfg = str(root / "config.json")
    assert main(["gen", "--config", cfg, "--out", str(root / "data")]) == 0
    data = root / "data"
    assert main(["fit", str(data / "X.txt"), str(data / "supports.txt"), "--features",
                 str(data / "features.txt"), "--config", cfg, "--out", str(root / "model")]) == 0
    return root


class TestGen:
    def test_outputs(self, work):
        names = {p.name for p in (work / "data").iterdir()}
        assert {"X.txt", "supports.txt", "features.txt", "labels.txt", "truth", "manifest.json"} <= names

    def test_matches_generator(self, work):
        cfg = load_config(work / "config.json")
        inst = generate(cfg.gen, seed=cfg.seed)
        assert io.read_matrix(work / "data" / "X.txt") == inst.X
        assert io.read_supports(work / "data" / "supports.txt") == inst.supports_true
        np.testing.assert_array_equal(io.read_labels(work / "data" / "labels.txt"), inst.labels)
        truth = io.read_model(work / "data" / "truth").model
        np.testing.assert_array_equal(truth.A, inst.A_true)

    def test_rerun_byte_identical(self, work, tmp_path):
        assert main(["gen", "--config", str(work / "config.json"), "--out", str(tmp_path / "again")]) == 0
        assert same_tree(work / "data", tmp_path / "again")

    def test_seed_override(self, work, tmp_path):
        assert main(["gen", "--config", str(work / "config.json"), "--seed", "6", "--out", str(tmp_path)]) == 0
        assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 6


class TestFit:
    def test_outputs_and_report(self, work):
        model = io.read_model(work / "model")
        report = json.loads((work / "model" / "report.json").read_text())
        X = io.read_matrix(work / "data" / "X.txt")
        truth = io.read_model(work / "data" / "truth").model
        from groundnmf import reconstruct
        planted = i_divergence(X, reconstruct(truth))
        assert report["objective_trace"][-1] <= planted + 1e-6
        assert model.feature_names == io.read_names(work / "data" / "features.txt")

    def test_rerun_byte_identical(self, work, tmp_path):
        data = work / "data"
        assert main(["fit", str(data / "X.txt"), str(data / "supports.txt"), "--features",
                     str(data / "features.txt"), "--config", str(work / "config.json"),
                     "--out", str(tmp_path / "m")]) == 0
        assert same_tree(work / "model", tmp_path / "m")

    def test_no_simplex_flag(self, work, tmp_path):
        data = work / "data"
        assert main(["fit", str(data / "X.txt"), str(data / "supports.txt"), "--config",
                     str(work / "config.json"), "--no-simplex", "--out", str(tmp_path / "m")]) == 0
        assert io.read_model(tmp_path / "m").manifest["simplex_enabled"] is False


class TestTransform:
    def test_without_supports(self, work, tmp_path):
        assert main(["transform", str(work / "data" / "X.txt"), "--model", str(work / "model"),
                     "--out", str(tmp_path / "W.tsv")]) == 0
        _, conditions, W = io.read_table(tmp_path / "W.tsv", "condition")
        assert W.shape == (3, 60) and W.min() >= 0 and W.max() <= 1

    def test_with_supports_respects_them(self, work, tmp_path):
        data = work / "data"
        assert main(["transform", str(data / "X.txt"), "--model", str(work / "model"), "--supports",
                     str(data / "supports.txt"), "--out", str(tmp_path / "W.tsv")]) == 0
        _, _, W = io.read_table(tmp_path / "W.tsv", "condition")
        mask = io.read_supports(data / "supports.txt").mask()
        assert np.all(W[~mask] == 0)

    def test_bias_column(self, work, tmp_path):
        model = io.read_model(work / "model").model
        from groundnmf import CountMatrix
        io.write_matrix(tmp_path / "x.txt", CountMatrix.from_dense(model.b[:, None]))
        assert main(["transform", str(tmp_path / "x.txt"), "--model", str(work / "model"),
                     "--out", str(tmp_path / "W.tsv")]) == 0
        _, _, W = io.read_table(tmp_path / "W.tsv", "condition")
        assert np.abs(W).max() < 1e-2


class TestEval:
    def test_sparsity_delegates(self, work, tmp_path):
        assert main(["eval", "sparsity", "--model", str(work / "model"), "--out", str(tmp_path / "s.json")]) == 0
        rep = json.loads((tmp_path / "s.json").read_text())
        assert rep["median_nnz"] == sparsity(io.read_model(work / "model").model).median_nnz

    def test_sweep(self, work, tmp_path):
        data = work / "data"
        assert main(["eval", "sweep", str(data / "X.txt"), str(data / "supports.txt"), "--config",
                     str(work / "config.json"), "--lambdas", "4,8,16", "--out", str(tmp_path / "w.json")]) == 0
        rows = json.loads((tmp_path / "w.json").read_text())["rows"]
        assert [r["lambda"] for r in rows] == [4.0, 8.0, 16.0]
        div = [r["divergence"] for r in rows]
        assert sum(b > a for a, b in zip(div, div[1:])) <= 1

    def test_predict_augmented(self, work, tmp_path):
        data = work / "data"
        assert main(["eval", "predict", str(data / "X.txt"), str(data / "supports.txt"), str(data / "labels.txt"),
                     "--config", str(work / "config.json"), "--mode", "augmented",
                     "--out", str(tmp_path / "p.json")]) == 0
        rep = json.loads((tmp_path / "p.json").read_text())
        assert 0.0 <= rep["nonzero_raw_feature_fraction"] <= 1.0

    def test_top_terms(self, work, tmp_path, capsys):
        assert main(["eval", "top-terms", "--model", str(work / "model"), "--top-k", "3",
                     "--out", str(tmp_path / "t.json")]) == 0
        terms = json.loads((tmp_path / "t.json").read_text())
        assert len(terms) == 3 and all(len(v) == 3 for v in terms.values())


def malformed_corpus(root):
    """(name, argv) pairs that must exit with code 2."""
    data = root / "data"
    bad = root / "bad"
    bad.mkdir(exist_ok=True)
    files = {
        "header.txt": "%%nope 2 2 1\n1 1 1\n",
        "count.txt": "%%cnmf-matrix 20 60 5\n1 1 1\n",
        "range.txt": "%%cnmf-matrix 20 60 1\n21 1 1\n",
        "negative.txt": "%%cnmf-matrix 20 60 1\n1 1 -2\n",
        "dup.txt": "%%cnmf-matrix 20 60 2\n1 1 1\n1 1 2\n",
        "empty_n.txt": "%%cnmf-matrix 20 0 0\n",
        "supports_short.txt": "%%cnmf-supports 2 3\n1\n2\n",
        "supports_range.txt": "%%cnmf-supports 1 3\n7\n",
        "config_key.json": json.dumps({"solver": {"bogus": 1}}),
        "config_syntax.json": "{",
        "labels_bad.txt": "%%cnmf-labels 60\n" + "3\n" * 60,
    }
    for name, text in files.items():
        (bad / name).write_text(text)
    X, S, L = str(data / "X.txt"), str(data / "supports.txt"), str(data / "labels.txt")
    out = str(root / "never")
    return [
        ("header", ["fit", str(bad / "header.txt"), S, "--out", out]),
        ("count", ["fit", str(bad / "count.txt"), S, "--out", out]),
        ("range", ["fit", str(bad / "range.txt"), S, "--out", out]),
        ("negative", ["fit", str(bad / "negative.txt"), S, "--out", out]),
        ("dup", ["fit", str(bad / "dup.txt"), S, "--out", out]),
        ("empty_n", ["fit", str(bad / "empty_n.txt"), S, "--out", out]),
        ("supports_short", ["fit", X, str(bad / "supports_short.txt"), "--out", out]),
        ("supports_range", ["fit", X, str(bad / "supports_range.txt"), "--out", out]),
        ("config_key", ["fit", X, S, "--config", str(bad / "config_key.json"), "--out", out]),
        ("config_syntax", ["fit", X, S, "--config", str(bad / "config_syntax.json"), "--out", out]),
        ("missing_input", ["fit", str(bad / "absent.txt"), S, "--out", out]),
        ("missing_model", ["transform", X, "--model", str(bad), "--out", out]),
        ("labels", ["eval", "predict", X, S, str(bad / "labels_bad.txt"), "--out", out]),
        ("bad_lambda", ["fit", X, S, "--lambda", "-1", "--out", out]),
        ("bad_lambdas", ["eval", "sweep", X, S, "--lambdas", "a,b", "--out", out]),
        ("unknown_command", ["frobnicate"]),
    ]


class TestExitCodes:
    def test_malformed_corpus(self, work, capsys):
        for name, argv in malformed_corpus(work):
            try:
                code = main(argv)
            except SystemExit as exc:
                code = exc.code
            assert code == 2, name
            assert not (work / "never").exists(), name

    def test_unknown_key_named(self, work, capsys):
        corpus = dict(malformed_corpus(work))
        main(corpus["config_key"])
        assert "solver.bogus" in capsys.readouterr().err

    def test_runtime_failure_is_one(self, work, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        data = work / "data"
        code = main(["fit", str(data / "X.txt"), str(data / "supports.txt"), "--config",
                     str(work / "config.json"), "--out", str(blocker / "sub")])
        assert code == 1

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "groundnmf", "--help"], capture_output=True, text=True)
        assert res.returncode == 0 and "fit" in res.stdout
