import math

import numpy as np
import pytest
from scipy import integrate, stats

from expsig.datasets import (
    BIDIM_PROCESSES,
    Dataset,
    TaskParams,
    TSVFormatError,
    assemble_tasks,
    gen_bm,
    gen_fbm,
    gen_gbm,
    gen_moment_matched_pair,
    gen_noisy_smooth,
    gen_nonlinear_sde,
    gen_ou,
    load_tsv,
    make_task,
    smooth_signal,
    write_tsv,
)
from expsig.signature import TimeSeries


def within(sample_mean, target, sd, n, k=5.0):
    assert abs(sample_mean - target) < k * sd / math.sqrt(n)


class TestDataset:
    def test_infers_class_count(self):
        x = TimeSeries([0.0, 1.0], [0.0, 1.0])
        assert Dataset([(x, 0), (x, 2), (x, 1)]).class_count == 3

    def test_rejects_empty_class(self):
        x = TimeSeries([0.0, 1.0], [0.0, 1.0])
        with pytest.raises(ValueError):
            Dataset([(x, 0), (x, 2)], class_count=3)

    def test_rejects_mixed_dims(self):
        a = TimeSeries([0.0, 1.0], [0.0, 1.0])
        b = TimeSeries([0.0, 1.0], [[0.0, 1.0], [1.0, 2.0]])
        with pytest.raises(ValueError):
            Dataset([(a, 0), (b, 1)])


class TestBM:
    def test_moments(self):
        n, T = 10000, 2.0
        _, X = gen_bm(n, 20, T, seed=1)
        np.testing.assert_array_equal(X[:, 0], 0.0)
        within(X[:, -1].mean(), 0.0, math.sqrt(T), n)
        # variance of the sample variance of a Gaussian is 2 sigma^4 / n
        within(X[:, -1].var(), T, math.sqrt(2) * T, n)

    def test_deterministic(self):
        np.testing.assert_array_equal(gen_bm(5, seed=3)[1], gen_bm(5, seed=3)[1])


class TestFBM:
    def test_half_is_brownian(self):
        n = 20000
        t, X = gen_fbm(n, 0.5, 6, 1.0, seed=2)
        S = X.T @ X / n
        expect = np.minimum.outer(t, t)
        # entrywise MC standard error of a second moment: sqrt((C_ss C_tt + C_st^2) / n)
        se = np.sqrt((np.outer(np.diag(expect), np.diag(expect)) + expect**2) / n)
        np.testing.assert_array_less(np.abs(S - expect), 5 * se + 1e-15)

    @pytest.mark.parametrize("H", [0.3, 0.7])
    def test_variance_scaling(self, H):
        n = 20000
        t, X = gen_fbm(n, H, 10, 1.0, seed=4)
        for j in (3, 9):
            within(np.mean(X[:, j] ** 2), t[j] ** (2 * H), math.sqrt(2) * t[j] ** (2 * H), n)
        np.testing.assert_array_equal(X[:, 0], 0.0)

    def test_invalid_hurst(self):
        with pytest.raises(ValueError):
            gen_fbm(1, 1.0)


class TestGBM:
    def test_zero_volatility(self):
        t, X = gen_gbm(3, mu=0.7, sigma=0.0, x0=2.0, N=11)
        np.testing.assert_allclose(X, np.tile(2.0 * np.exp(0.7 * t), (3, 1)), rtol=1e-12)

    def test_mean(self):
        n, mu, sigma = 20000, 0.5, 0.5
        _, X = gen_gbm(n, mu, sigma, 1.0, 20, 1.0, seed=5)
        sd = math.sqrt((math.exp(sigma**2) - 1) * math.exp(2 * mu))
        within(X[:, -1].mean(), math.exp(mu), sd, n)
        assert np.all(X > 0)


class TestOU:
    def test_no_noise(self):
        t, X = gen_ou(2, alpha=2.0, gamma=1.0, beta=0.0, x0=3.0, N=9)
        np.testing.assert_allclose(X[0], 1.0 + 2.0 * np.exp(-2.0 * t), rtol=1e-12)

    def test_mean_relaxation(self):
        n, a, g, x0 = 20000, 1.5, 0.5, 2.0
        t, X = gen_ou(n, a, g, 0.4, x0, 20, 1.0, seed=6)
        var_T = 0.4**2 / (2 * a) * (1 - math.exp(-2 * a))
        within(X[:, -1].mean(), g + (x0 - g) * math.exp(-a), math.sqrt(var_T), n)

    def test_stationary_variance(self):
        n, a, b = 20000, 3.0, 0.5
        _, X = gen_ou(n, a, 0.0, b, 0.0, 30, 5.0, seed=7)
        v = b**2 / (2 * a)
        # at T = 5 the transient exp(-2 a T) is negligible
        within(X[:, -1].var(), v, math.sqrt(2) * v, n)

    def test_invalid_alpha(self):
        with pytest.raises(ValueError):
            gen_ou(1, alpha=0.0)


class TestNonlinearSDE:
    def test_zero_noise_matches_ode(self):
        t, X = gen_nonlinear_sde(1, x0=0.2, N=11, T=1.0, refine=200, noise_scale=0.0)
        sol = integrate.solve_ivp(lambda s, x: np.sqrt(1 + x**2) + 0.5 * x, (0, 1), [0.2],
                                  t_eval=t, rtol=1e-11, atol=1e-12)
        np.testing.assert_allclose(X[0], sol.y[0], atol=5e-3)
        assert X[0, 0] == 0.2

    def test_two_resolutions_agree(self):
        n = 20000
        _, a = gen_nonlinear_sde(n, N=11, T=0.5, seed=8, refine=10)
        _, b = gen_nonlinear_sde(n, N=11, T=0.5, seed=9, refine=20)
        sd = max(a[:, -1].std(), b[:, -1].std())
        assert abs(a[:, -1].mean() - b[:, -1].mean()) < 5 * sd * math.sqrt(2 / n)


class TestNoisySmooth:
    def test_signal_values(self):
        assert smooth_signal(0.0) == 0.0
        assert smooth_signal(1 / 8) == pytest.approx(0.0, abs=1e-15)

    def test_pointwise_mean(self):
        n, s = 5000, 0.3
        t, X = gen_noisy_smooth(n, s, 20, seed=10)
        for j in (3, 11):
            within(X[:, j].mean(), smooth_signal(t[j]), s, n)


class TestMomentMatched:
    def test_lognormal_and_matched_means(self):
        n = 40000
        s = gen_moment_matched_pair(n, seed=11)
        sd = math.sqrt((math.e - 1) * math.e)
        for c in range(2):
            within(s.N[:, c].mean(), math.exp(0.5), sd, n)
            within(s.M[:, c].mean(), math.exp(0.5), 1.5 * sd, n)

    def test_quadrature_first_moment(self):
        # in log space the perturbed law has density phi(x)(1 + sin(2 pi x))
        f = lambda x: math.exp(x) * stats.norm.pdf(x) * (1 + math.sin(2 * math.pi * x))
        val, _ = integrate.quad(f, -12, 14, limit=400, epsabs=1e-13)
        assert val == pytest.approx(math.exp(0.5), rel=1e-10)

    def test_acceptance_rate(self):
        n = 20000
        s = gen_moment_matched_pair(n, seed=12)
        within(s.acceptance_rate, 0.5, 0.5, 2 * n)

    def test_distributions_differ(self):
        s = gen_moment_matched_pair(20000, seed=13)
        assert stats.ks_2samp(np.log(s.N[:, 0]), np.log(s.M[:, 0])).pvalue < 1e-6

    def test_series_shape(self):
        s = gen_moment_matched_pair(3, seed=0)
        xs = s.series("Y")
        assert len(xs) == 3 and xs[0].values.shape == (2, 2)
        np.testing.assert_array_equal(xs[1].values[1], s.M[1])


class TestTasks:
    def test_bidim_has_six_classes(self):
        tr, te = make_task("bidim", 0, 4, 2)
        assert tr.class_count == len(BIDIM_PROCESSES) == 6
        assert tr.dim == 2
        np.testing.assert_array_equal(np.bincount(tr.labels), 4)
        np.testing.assert_array_equal(np.bincount(te.labels), 2)

    def test_balanced_and_deterministic(self):
        a, _ = make_task("ou", 3, 5, 5)
        b, _ = make_task("ou", 3, 5, 5)
        np.testing.assert_array_equal(np.bincount(a.labels), [5, 5])
        for (x, lx), (y, ly) in zip(a.items, b.items):
            assert lx == ly
            np.testing.assert_array_equal(x.values, y.values)

    def test_params_respected(self):
        tr, _ = make_task("fbm", 0, 2, 2, TaskParams(N=17, T=3.0))
        assert len(tr.items[0][0]) == 17
        assert tr.items[0][0].times[-1] == 3.0

    def test_assemble(self):
        tasks = assemble_tasks(0, 3, 3)
        assert set(tasks) == {"FBM", "OU", "Bidim"}
        assert tasks["Bidim"][0].class_count == 6

    def test_unknown_task(self):
        with pytest.raises(ValueError):
            make_task("sine", 0)


class TestTSV:
    def test_plain_file(self, tmp_path):
        p = tmp_path / "toy.tsv"
        p.write_text("1\t0.5\t0.7\t0.1\n-1\t1.0\t2.0\t3.0\n")
        d = load_tsv(p)
        assert len(d) == 2
        np.testing.assert_array_equal(d.labels, [1, 0])  # labels sorted: -1 -> 0, 1 -> 1
        np.testing.assert_allclose(d.items[0][0].times, [0.0, 0.5, 1.0])

    def test_comma_separated(self, tmp_path):
        p = tmp_path / "toy.csv"
        p.write_text("a,1,2\nb,3,4\n")
        assert load_tsv(p).labels.tolist() == [0, 1]

    def test_bad_token_names_line(self, tmp_path):
        p = tmp_path / "bad.tsv"
        p.write_text("0\t1\t2\n1\t3\tx\n")
        with pytest.raises(TSVFormatError, match=":2:"):
            load_tsv(p)

    def test_ragged(self, tmp_path):
        p = tmp_path / "bad.tsv"
        p.write_text("0\t1\t2\n1\t3\n")
        with pytest.raises(TSVFormatError, match="ragged"):
            load_tsv(p)

    def test_unknown_label(self, tmp_path):
        p = tmp_path / "toy.tsv"
        p.write_text("0\t1\t2\n7\t3\t4\n")
        with pytest.raises(TSVFormatError, match="unknown label"):
            load_tsv(p, labels={"0": 0, "1": 1})

    @pytest.mark.parametrize("task", ["ou", "bidim"])
    def test_round_trip(self, tmp_path, task):
        tr, _ = make_task(task, 1, 3, 1)
        write_tsv(tr, tmp_path / "d.tsv")
        back = load_tsv(tmp_path / "d.tsv")
        assert back.class_count == tr.class_count
        np.testing.assert_array_equal(back.labels, tr.labels)
        for (x, _), (y, _) in zip(tr.items, back.items):
            np.testing.assert_array_equal(x.times, y.times)
            np.testing.assert_array_equal(x.values, y.values)
