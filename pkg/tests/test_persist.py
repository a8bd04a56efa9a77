import json

import numpy as np
import pytest

from expsig.baselines import init_readout
from expsig.model import ModelHyper, TrainConfig, forward_runs, draw_eps, init_params
from expsig.persist import (
    ConfigError,
    ModelFormatError,
    RunConfig,
    format_config,
    load_config,
    load_model,
    model_from_dict,
    model_to_dict,
    parse_config,
    save_model,
)
from expsig.signature import TimeSeries


class TestConfig:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg.hyper == ModelHyper() and cfg.train == TrainConfig()
        assert cfg.folds == 0 and cfg.M is None and cfg.grid == {}

    def test_values_and_comments(self):
        cfg = parse_config("# header\nL = 3\nC = 1.5  # trailing\nalpha = none\n"
                           "freeze_samples = yes\nlr = 0.25\nstrategy = extended\n")
        assert cfg.hyper.L == 3 and cfg.hyper.C == 1.5 and cfg.hyper.alpha is None
        assert cfg.hyper.freeze_samples is True
        assert cfg.train.lr == 0.25 and cfg.hyper.strategy == "extended"

    def test_seed_goes_to_both(self):
        cfg = parse_config("seed = 9\n")
        assert cfg.hyper.seed == 9 and cfg.train.seed == 9
        assert cfg.with_seed(3).train.seed == 3

    def test_grid(self):
        cfg = parse_config("folds = 3\ngrid.C = 1.5, 4, 10\ngrid.lr = 0.1,0.5\n")
        assert cfg.grid == {"C": [1.5, 4.0, 10.0], "lr": [0.1, 0.5]}
        assert cfg.folds == 3

    @pytest.mark.parametrize("text,match", [
        ("depth = 3\n", "unknown key"),
        ("L = 2\nL3\n", ":2:"),
        ("grid.depth = 1, 2\n", "unknown grid key"),
        ("L = two\n", "bad value for 'L'"),
        ("freeze_samples = maybe\n", "boolean"),
        ("L = none\n", "none is not allowed"),
        ("C = 0.5\n", "C >= 1"),
        ("folds = 1\n", "folds"),
        ("strategy = cubic\n", "strategy"),
    ])
    def test_rejects(self, text, match):
        with pytest.raises(ConfigError, match=match):
            parse_config(text, "cfg.txt")

    def test_round_trip(self, tmp_path):
        cfg = parse_config("L = 4\nC = 1.01\nalpha = 2\nmargin = none\nepochs = 7\nfolds = 2\n"
                           "M = 9\ngrid.K = 4, 8\n")
        path = tmp_path / "run.cfg"
        path.write_text(format_config(cfg))
        back = load_config(path)
        assert back.hyper == cfg.hyper and back.train == cfg.train
        assert (back.folds, back.M, back.grid) == (2, 9, {"K": [4, 8]})

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_config(tmp_path / "absent.cfg")


def expsig_model(rng):
    x = TimeSeries(np.linspace(0, 1, 5), rng.normal(size=(5, 2)))
    p = init_params(ModelHyper(L=2, K=3, alpha=2, C=1.5), x, 3)
    for arr in p.arrays().values():
        arr[...] = rng.normal(size=arr.shape) / 3
    return p, x


class TestModelFile:
    def test_expsig_round_trip_is_exact(self, rng, tmp_path):
        p, x = expsig_model(rng)
        save_model(p, tmp_path / "m.json")
        q = load_model(tmp_path / "m.json")
        for name, arr in p.arrays().items():
            np.testing.assert_array_equal(q.arrays()[name], arr)
        assert q.hyper == p.hyper and q.n_points == p.n_points and q.dim == 2
        eps = draw_eps(p, rng)
        np.testing.assert_array_equal(forward_runs(q, x, eps), forward_runs(p, x, eps))

    @pytest.mark.parametrize("kind", ["noaug", "fft", "cs", "gp"])
    def test_readout_round_trip(self, rng, tmp_path, kind):
        x = TimeSeries(np.linspace(0, 1, 6), rng.normal(size=6))
        p = init_readout(kind, ModelHyper(L=3), x, 2)
        p.W[:] = rng.normal(size=p.W.shape)
        save_model(p, tmp_path / "r.json")
        q = load_model(tmp_path / "r.json")
        np.testing.assert_array_equal(q.W, p.W)
        np.testing.assert_array_equal(q.predict_proba(x), p.predict_proba(x))

    def test_key_order(self, rng):
        p, _ = expsig_model(rng)
        d = json.loads(json.dumps(model_to_dict(p)))
        assert list(d) == ["format", "version", "kind", "dim", "n_points", "hyper", "arrays"]
        assert list(d["arrays"]) == ["W_m", "b_m", "W_V", "b_V", "readout_W", "readout_b"]
        assert list(d["hyper"]) == list(vars(ModelHyper()))

    @pytest.mark.parametrize("edit,match", [
        (lambda d: d.update(version=2), "unsupported model version"),
        (lambda d: d.update(format="other"), "not an expsig"),
        (lambda d: d.update(kind="wavelet"), "unknown model kind"),
        (lambda d: d["hyper"].update(depth=1), "unknown hyper"),
        (lambda d: d["arrays"].pop("b_V"), "expected arrays"),
        (lambda d: d["arrays"]["b_m"].update(shape=[99]), "values for shape"),
    ])
    def test_rejects_malformed(self, rng, edit, match):
        p, _ = expsig_model(rng)
        d = model_to_dict(p)
        edit(d)
        with pytest.raises(ModelFormatError, match=match):
            model_from_dict(d)

    def test_invalid_json(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(ModelFormatError, match="invalid JSON"):
            load_model(tmp_path / "bad.json")

    def test_unknown_object(self):
        with pytest.raises(TypeError):
            model_to_dict(RunConfig())
