import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from expsig.cli import main
from expsig.datasets import Dataset, load_tsv, write_tsv
from expsig.persist import load_model
from expsig.signature import TimeSeries

SMALL = ["--n-train", "6", "--n-test", "4", "--length", "8"]


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# expsig ")
    return list(csv.DictReader(lines[1:]))


def files_of(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def rerun_identical(argv, out):
    """Run the same command twice into ``out`` and assert every file is byte-identical."""
    assert main([*argv, "--out", str(out)]) == 0
    first = files_of(out)
    for f in out.iterdir():
        f.unlink()
    assert main([*argv, "--out", str(out)]) == 0
    assert files_of(out) == first
    return first


@pytest.fixture
def toy(tmp_path):
    """Separable two-class toy set: rising vs falling lines."""
    rng = np.random.default_rng(0)
    t = np.linspace(0, 1, 6)

    def make(n):
        items = [(TimeSeries(t, (1.0 if k % 2 else -1.0) * t + 0.05 * rng.normal(size=6)), k % 2)
                 for k in range(n)]
        return Dataset(items, "toy", 2)

    write_tsv(make(20), tmp_path / "toy_train.tsv")
    write_tsv(make(10), tmp_path / "toy_test.tsv")
    (tmp_path / "fast.cfg").write_text("L = 2\nK = 4\nepochs = 15\nlr = 0.5\nbatch_size = 4\n")
    return tmp_path


class TestGen:
    def test_byte_identical(self, tmp_path):
        files = rerun_identical(["gen", "--task", "ou", "--seed", "3", *SMALL], tmp_path)
        assert set(files) == {"ou_train.tsv", "ou_test.tsv", "ou_meta.json"}

    def test_seed_changes_data(self, tmp_path):
        main(["gen", "--task", "fbm", "--seed", "1", "--out", str(tmp_path / "a"), *SMALL])
        main(["gen", "--task", "fbm", "--seed", "2", "--out", str(tmp_path / "b"), *SMALL])
        assert (tmp_path / "a/fbm_train.tsv").read_bytes() != (tmp_path / "b/fbm_train.tsv").read_bytes()

    def test_bidim(self, tmp_path):
        main(["gen", "--task", "bidim", "--out", str(tmp_path), *SMALL])
        d = load_tsv(tmp_path / "bidim_train.tsv")
        assert d.class_count == 6 and d.dim == 2 and len(d) == 36
        assert json.loads((tmp_path / "bidim_meta.json").read_text())["classes"] == 6

    def test_missing_task_is_usage_error(self, tmp_path, capsys):
        assert main(["gen", "--out", str(tmp_path)]) == 2

    def test_unknown_verb(self):
        assert main(["fly"]) == 2


class TestTrain:
    def test_zero_lr_keeps_initial_params(self, toy):
        cfg = toy / "zero.cfg"
        cfg.write_text("L = 2\nK = 2\nepochs = 2\nlr = 0\n")
        a, b = toy / "a", toy / "b"
        assert main(["train", "--train", str(toy / "toy_train.tsv"), "--config", str(cfg),
                     "--out", str(a)]) == 0
        cfg.write_text("L = 2\nK = 2\nepochs = 0\nlr = 0\n")
        main(["train", "--train", str(toy / "toy_train.tsv"), "--config", str(cfg), "--out", str(b)])
        pa, pb = load_model(a / "model.json"), load_model(b / "model.json")
        for name, arr in pa.arrays().items():
            np.testing.assert_array_equal(arr, pb.arrays()[name])

    def test_reproducible(self, toy):
        args = ["train", "--train", str(toy / "toy_train.tsv"), "--val", str(toy / "toy_test.tsv"),
                "--config", str(toy / "fast.cfg"), "--seed", "5"]
        rerun_identical(args, toy / "a")
        hist = read_csv(toy / "a/history.csv")
        assert len(hist) == 15 and list(hist[0]) == ["epoch", "loss", "train_wacc", "val_wacc"]

    def test_separable_toy(self, toy):
        main(["train", "--train", str(toy / "toy_train.tsv"), "--config", str(toy / "fast.cfg"),
              "--out", str(toy / "m")])
        main(["eval", "--model", str(toy / "m/model.json"), "--test", str(toy / "toy_test.tsv"),
              "--runs", "3", "--out", str(toy / "m")])
        rows = read_csv(toy / "m/metrics.csv")
        assert rows[-1]["run"] == "mean" and float(rows[-1]["wacc"]) >= 0.99

    @pytest.mark.parametrize("kind", ["noaug", "fft", "cs", "gp"])
    def test_baseline_kinds(self, toy, kind):
        assert main(["train", "--kind", kind, "--train", str(toy / "toy_train.tsv"),
                     "--config", str(toy / "fast.cfg"), "--out", str(toy / kind)]) == 0
        assert json.loads((toy / kind / "model.json").read_text())["kind"] == kind

    def test_grid_search_writes_table(self, toy):
        cfg = toy / "grid.cfg"
        cfg.write_text("L = 2\nepochs = 3\nfolds = 2\ngrid.lr = 0.0, 1.0\n")
        assert main(["train", "--kind", "noaug", "--train", str(toy / "toy_train.tsv"),
                     "--config", str(cfg), "--out", str(toy / "g")]) == 0
        rows = read_csv(toy / "g/search_noaug.csv")
        assert [r["lr"] for r in rows] == ["0.0", "1.0"]

    def test_M_mismatch(self, toy):
        cfg = toy / "m.cfg"
        cfg.write_text("L = 2\nM = 99\nepochs = 1\n")
        assert main(["train", "--train", str(toy / "toy_train.tsv"), "--config", str(cfg),
                     "--out", str(toy / "x")]) == 2

    def test_bad_config(self, toy):
        cfg = toy / "bad.cfg"
        cfg.write_text("depth = 2\n")
        assert main(["train", "--train", str(toy / "toy_train.tsv"), "--config", str(cfg)]) == 2

    def test_missing_file(self, toy):
        assert main(["train", "--train", str(toy / "absent.tsv"), "--out", str(toy)]) == 1


class TestEval:
    @pytest.fixture
    def trained(self, toy):
        for kind in ("expsig", "noaug"):
            main(["train", "--kind", kind, "--train", str(toy / "toy_train.tsv"),
                  "--config", str(toy / "fast.cfg"), "--out", str(toy / kind)])
        return toy

    def test_single_run_and_probs(self, trained):
        out = trained / "e"
        assert main(["eval", "--model", str(trained / "expsig/model.json"),
                     "--test", str(trained / "toy_test.tsv"), "--runs", "1", "--dump-probs",
                     "--out", str(out)]) == 0
        rows = read_csv(out / "metrics.csv")
        assert [r["run"] for r in rows] == ["0", "mean"]
        probs = read_csv(out / "probs.csv")
        assert len(probs) == 10
        for r in probs:
            assert float(r["p0"]) + float(r["p1"]) == pytest.approx(1.0, abs=1e-12)

    def test_deterministic_baseline_is_constant(self, trained):
        out = trained / "n"
        main(["eval", "--model", str(trained / "noaug/model.json"),
              "--test", str(trained / "toy_test.tsv"), "--runs", "4", "--out", str(out)])
        waccs = {r["wacc"] for r in read_csv(out / "metrics.csv")}
        assert len(waccs) == 1

    def test_byte_identical(self, trained):
        args = ["eval", "--model", str(trained / "expsig/model.json"),
                "--test", str(trained / "toy_test.tsv"), "--runs", "3", "--dump-probs"]
        rerun_identical(args, trained / "a")

    def test_dim_mismatch(self, trained, tmp_path):
        main(["gen", "--task", "bidim", "--out", str(tmp_path), *SMALL])
        assert main(["eval", "--model", str(trained / "expsig/model.json"),
                     "--test", str(tmp_path / "bidim_test.tsv"), "--out", str(tmp_path)]) == 1

    def test_zero_runs(self, trained):
        assert main(["eval", "--model", str(trained / "expsig/model.json"),
                     "--test", str(trained / "toy_test.tsv"), "--runs", "0"]) == 2


class TestVariance:
    @pytest.fixture
    def model(self, toy):
        main(["train", "--train", str(toy / "toy_train.tsv"), "--config", str(toy / "fast.cfg"),
              "--out", str(toy / "m")])
        return toy / "m/model.json"

    def test_K_sweep(self, toy, model):
        out = toy / "v"
        assert main(["variance", "--model", str(model), "--test", str(toy / "toy_test.tsv"),
                     "--runs", "5", "--K", "2,8", "--bins", "4", "--out", str(out)]) == 0
        assert set(files_of(out)) == {"variance_K2.csv", "variance_K2_hist.csv",
                                      "variance_K8.csv", "variance_K8_hist.csv"}
        hist = read_csv(out / "variance_K2_hist.csv")
        assert len(hist) == 4 and sum(int(r["count"]) for r in hist) == 10

    def test_zero_V(self, toy, model):
        d = json.loads(model.read_text())
        for name in ("W_V", "b_V"):
            d["arrays"][name]["data"] = [0.0] * len(d["arrays"][name]["data"])
        model.write_text(json.dumps(d))
        out = toy / "z"
        main(["variance", "--model", str(model), "--test", str(toy / "toy_test.tsv"),
              "--runs", "4", "--out", str(out)])
        norms = [float(r["cov_norm"]) for r in read_csv(out / "variance.csv")]
        np.testing.assert_allclose(norms, 0.0, atol=1e-28)

    def test_K_on_baseline_is_usage_error(self, toy):
        main(["train", "--kind", "noaug", "--train", str(toy / "toy_train.tsv"),
              "--config", str(toy / "fast.cfg"), "--out", str(toy / "n")])
        assert main(["variance", "--model", str(toy / "n/model.json"),
                     "--test", str(toy / "toy_test.tsv"), "--K", "4"]) == 2

    def test_bad_K_list(self, toy, model):
        assert main(["variance", "--model", str(model), "--test", str(toy / "toy_test.tsv"),
                     "--K", "4,x"]) == 2


class TestBenchmark:
    def test_toy_table(self, toy):
        args = ["benchmark", "--train", str(toy / "toy_train.tsv"), "--test", str(toy / "toy_test.tsv"),
                "--config", str(toy / "fast.cfg"), "--runs", "2"]
        rerun_identical(args, toy / "a")
        (row,) = read_csv(toy / "a/benchmark.csv")
        assert list(row) == ["dataset", "NoAug", "FFT", "CS", "GP", "Model"]
        assert row["dataset"] == "toy_train"
        for col in ("NoAug", "FFT", "CS", "GP", "Model"):
            assert float(row[col]) >= 0.99

    def test_task_mode(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("L = 2\nK = 2\nepochs = 1\n")
        assert main(["benchmark", "--task", "ou,fbm", "--config", str(cfg), "--runs", "1",
                     "--out", str(tmp_path), *SMALL]) == 0
        assert [r["dataset"] for r in read_csv(tmp_path / "benchmark.csv")] == ["ou", "fbm"]

    @pytest.mark.parametrize("extra", [[], ["--task", "sine"], ["--train", "x.tsv"]])
    def test_usage_errors(self, tmp_path, extra):
        assert main(["benchmark", "--out", str(tmp_path), *extra]) == 2


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "expsig", "gen", "--task", "ou", "--out", str(tmp_path),
                        *SMALL], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "ou_train.tsv").exists()
