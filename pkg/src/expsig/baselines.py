"""Deterministic baselines: signature + normalization + softmax on raw or
deterministically augmented series (FFT, cubic spline, GP posterior mean)."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import interpolate, signal

from .augmentation import TimeGrid, fit_gp_hyper, gp_posterior, make_grid, new_times_midpoints
from .normalization import NormConfig, normalize_batch
from .signature import TimeSeries, signature_batch, time_augment
from .tensor_algebra import ShapeError

PREPROCESSORS = ("noaug", "fft", "cs", "gp")


def fft_augment(x: TimeSeries, factor: int = 2) -> TimeSeries:
    """Trigonometric interpolation onto a grid ``factor`` times finer.

    Non-uniform inputs are first resampled linearly onto a uniform grid with
    the same endpoints. Only points inside ``[t_1, t_N]`` are kept, so the
    output has ``(N - 1) * factor + 1`` points.
    """
    if factor < 1:
        raise ValueError("factor must be at least 1")
    t, v = x.times, x.values
    N = t.size
    uniform = np.linspace(t[0], t[-1], N)
    if not np.allclose(np.diff(t), np.diff(t).mean(), rtol=1e-9, atol=0.0):
        v = np.column_stack([np.interp(uniform, t, v[:, c]) for c in range(v.shape[1])])
    if factor == 1:
        return TimeSeries(uniform, v.copy())
    fine = signal.resample(v, N * factor, axis=0)[: (N - 1) * factor + 1]
    fine[::factor] = v  # resample reproduces the knots up to rounding; pin them exactly
    return TimeSeries(np.linspace(t[0], t[-1], (N - 1) * factor + 1), fine)


def cubic_spline_augment(x: TimeSeries, grid: TimeGrid | None = None) -> TimeSeries:
    """Natural cubic spline through ``x`` evaluated on the merged grid."""
    if len(x) < 3:
        raise ValueError("cubic spline augmentation needs at least 3 points")
    grid = grid or new_times_midpoints(x.times)
    spline = interpolate.CubicSpline(x.times, x.values, axis=0, bc_type="natural")
    merged = grid.merged
    vals = spline(merged)
    vals[grid.original_positions] = x.values
    return TimeSeries(merged, vals)


def gp_mean_augment(x: TimeSeries, grid: TimeGrid | None = None, hyper=None) -> TimeSeries:
    """Posterior mean of a constant-mean squared-exponential GP on the merged grid.

    ``hyper = (sigma, length, noise)``; fitted by marginal likelihood when omitted.
    """
    grid = grid or new_times_midpoints(x.times)
    sigma, length, noise = hyper or fit_gp_hyper(x)
    mean, _ = gp_posterior(x, grid.new, sigma, length, noise)
    vals = np.empty((grid.merged.size, x.dim))
    vals[grid.original_positions] = x.values
    vals[grid.new_positions] = mean
    return TimeSeries(grid.merged, vals)


def preprocess(x: TimeSeries, kind: str, grid_strategy: dict | None = None) -> TimeSeries:
    if kind == "noaug":
        return x
    if kind == "fft":
        return fft_augment(x, 2)
    grid = make_grid(x.times, **(grid_strategy or {}))
    if kind == "cs":
        return cubic_spline_augment(x, grid)
    if kind == "gp":
        return gp_mean_augment(x, grid)
    raise ValueError(f"unknown preprocessing {kind!r}; choose from {PREPROCESSORS}")


def noaug_features(x: TimeSeries, level: int, cfg: NormConfig, rescale_time: bool = True) -> np.ndarray:
    """Levels ``1..L`` of the normalized signature of the time-augmented series."""
    z = time_augment(x, rescale_time)
    sig = signature_batch(z.values[None], level)
    normed, _ = normalize_batch(sig, z.dim, level, cfg)
    return normed[0, 1:]


@dataclass(eq=False)
class ReadoutParams:
    """Linear softmax readout over deterministic normalized-signature features."""

    W: np.ndarray
    b: np.ndarray
    hyper: object
    dim: int
    preprocess: str = "noaug"

    def __post_init__(self):
        self._cache: dict = {}

    @property
    def kind(self) -> str:
        return self.preprocess

    @property
    def n_classes(self) -> int:
        return self.W.shape[0]

    @property
    def norm_cfg(self) -> NormConfig:
        return NormConfig(C=self.hyper.C, a=self.hyper.a)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def copy(self) -> ReadoutParams:
        q = ReadoutParams(self.W.copy(), self.b.copy(), replace(self.hyper), self.dim, self.preprocess)
        q._cache = self._cache
        return q

    def features(self, x: TimeSeries) -> np.ndarray:
        if x.dim != self.dim:
            raise ShapeError(f"readout expects dim {self.dim}, got {x.dim}")
        key = (x.times.tobytes(), x.values.tobytes())
        feats = self._cache.get(key)
        if feats is None:
            z = preprocess(x, self.preprocess)
            feats = noaug_features(z, self.hyper.L, self.norm_cfg, self.hyper.rescale_time)
            self._cache[key] = feats
        return feats

    def predict_proba(self, x: TimeSeries, rng=None) -> np.ndarray:
        from .model import softmax

        return softmax(self.W @ self.features(x) + self.b)

    def loss_and_grad(self, x: TimeSeries, label: int, rng=None):
        from .model import softmax

        phi = self.features(x)
        probs = softmax(self.W @ phi + self.b)
        loss = -float(np.log(max(probs[label], 1e-300)))
        dlogits = probs.copy()
        dlogits[label] -= 1.0
        return loss, ReadoutGrad(np.outer(dlogits, phi), dlogits), probs

    def apply_(self, grad: ReadoutGrad, lr: float) -> None:
        self.W -= lr * grad.W
        self.b -= lr * grad.b


@dataclass(eq=False)
class ReadoutGrad:
    W: np.ndarray
    b: np.ndarray

    def add_(self, other: ReadoutGrad) -> ReadoutGrad:
        self.W += other.W
        self.b += other.b
        return self

    def scale_(self, c: float) -> ReadoutGrad:
        self.W *= c
        self.b *= c
        return self


def init_readout(kind: str, hyper, x_ref: TimeSeries, n_classes: int) -> ReadoutParams:
    from .model import feature_length

    if kind not in PREPROCESSORS:
        raise ValueError(f"unknown baseline {kind!r}; choose from {PREPROCESSORS}")
    P = feature_length(x_ref.dim, hyper.L)
    return ReadoutParams(np.zeros((n_classes, P)), np.zeros(n_classes), replace(hyper), x_ref.dim, kind)


def noaug_classify(x: TimeSeries, p: ReadoutParams) -> np.ndarray:
    """Class probabilities of a readout model (deterministic)."""
    return p.predict_proba(x)
