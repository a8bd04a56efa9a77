"""Learned Gaussian data augmentation.

A linear map turns ``[values; times; new times]`` into a mean ``m`` and a
lower-triangular square-root covariance ``V`` for the values at the new time
instants. ``K`` coherent series are drawn as ``V eps + m`` and interleaved with
the original points. The classic GP posterior used by the baseline lives here
too, since both share the grid machinery.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy import linalg

from .signature import TimeSeries
from .tensor_algebra import ShapeError

STRATEGIES = ("midpoints", "extended")


@dataclass(frozen=True, eq=False)
class TimeGrid:
    original: np.ndarray
    new: np.ndarray
    strategy: str = "midpoints"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        object.__setattr__(self, "original", np.asarray(self.original, dtype=np.float64))
        object.__setattr__(self, "new", np.asarray(self.new, dtype=np.float64))

    @property
    def merged(self) -> np.ndarray:
        return np.concatenate([self.original, self.new])[self.order]

    @property
    def order(self) -> np.ndarray:
        """Permutation sorting ``[original, new]`` into time order."""
        order = np.argsort(np.concatenate([self.original, self.new]), kind="stable")
        merged = np.concatenate([self.original, self.new])[order]
        if np.any(np.diff(merged) <= 0):
            raise ValueError("time grid collision: duplicate time stamps")
        return order

    @property
    def new_positions(self) -> np.ndarray:
        """Row of each new time instant inside the merged grid."""
        inv = np.empty(len(self.original) + len(self.new), dtype=int)
        inv[self.order] = np.arange(inv.size)
        return inv[len(self.original) :]

    @property
    def original_positions(self) -> np.ndarray:
        inv = np.empty(len(self.original) + len(self.new), dtype=int)
        inv[self.order] = np.arange(inv.size)
        return inv[: len(self.original)]


def new_times_midpoints(times) -> TimeGrid:
    times = np.asarray(times, dtype=np.float64)
    if times.size < 2:
        raise ValueError("need at least two time stamps")
    return TimeGrid(times, 0.5 * (times[:-1] + times[1:]), "midpoints")


def new_times_extended(times, n_before: int, n_after: int, margin: float | None = None) -> TimeGrid:
    """Midpoints plus equally spaced points before ``t_1`` and after ``t_N``.

    ``margin`` defaults to the mean gap between consecutive time stamps.
    """
    times = np.asarray(times, dtype=np.float64)
    if n_before < 0 or n_after < 0:
        raise ValueError("n_before and n_after must be non-negative")
    if margin is None:
        margin = float(np.mean(np.diff(times)))
    if n_before + n_after > 0 and margin <= 0:
        raise ValueError("margin must be positive")
    mids = 0.5 * (times[:-1] + times[1:])
    before = times[0] - margin * np.arange(n_before, 0, -1) / n_before if n_before else []
    after = times[-1] + margin * np.arange(1, n_after + 1) / n_after if n_after else []
    new = np.concatenate([before, mids, after])
    return TimeGrid(times, new, "extended" if n_before + n_after else "midpoints")


def make_grid(times, strategy: str = "midpoints", n_before: int = 0, n_after: int = 0,
              margin: float | None = None) -> TimeGrid:
    if strategy == "midpoints":
        return new_times_midpoints(times)
    if strategy == "extended":
        return new_times_extended(times, n_before, n_after, margin)
    raise ValueError(f"unknown strategy {strategy!r}")


def tril_size(n: int) -> int:
    return n * (n + 1) // 2


def unpack_lower(packed: np.ndarray, n: int) -> np.ndarray:
    """Row-major packed lower triangle to a dense ``n x n`` matrix."""
    out = np.zeros((n, n))
    out[np.tril_indices(n)] = packed
    return out


def pack_lower(mat: np.ndarray) -> np.ndarray:
    return mat[np.tril_indices(mat.shape[0])]


@dataclass(eq=False)
class AugmenterParams:
    """Weights of the linear map producing ``m`` (``M*d``) and packed ``V``."""

    W_m: np.ndarray
    b_m: np.ndarray
    W_V: np.ndarray
    b_V: np.ndarray

    @property
    def n_out(self) -> int:
        return self.W_m.shape[0]

    @property
    def n_features(self) -> int:
        return self.W_m.shape[1]

    def copy(self) -> AugmenterParams:
        return AugmenterParams(self.W_m.copy(), self.b_m.copy(), self.W_V.copy(), self.b_V.copy())


def feature_vector(x: TimeSeries, grid: TimeGrid) -> np.ndarray:
    return np.concatenate([x.values.reshape(-1), x.times, grid.new])


def init_augmenter(x_ref: TimeSeries, grid: TimeGrid, rng: np.random.Generator,
                   v_scale: float = 1e-2) -> AugmenterParams:
    """Mean map starts at linear interpolation (constant outside the data range);
    ``W_V`` starts as ``v_scale``-scaled Gaussian noise, ``b_V`` at zero."""
    N, d = x_ref.values.shape
    M = grid.new.size
    F = N * d + N + M
    t = grid.original
    W_m = np.zeros((M * d, F))
    for i, s in enumerate(grid.new):
        j = int(np.clip(np.searchsorted(t, s) - 1, 0, N - 2))
        w = float(np.clip((s - t[j]) / (t[j + 1] - t[j]), 0.0, 1.0))
        for c in range(d):
            W_m[i * d + c, j * d + c] = 1.0 - w
            W_m[i * d + c, (j + 1) * d + c] = w
    n_tri = tril_size(M * d)
    W_V = v_scale * rng.standard_normal((n_tri, F))
    return AugmenterParams(W_m, np.zeros(M * d), W_V, np.zeros(n_tri))


def augmenter_forward(p: AugmenterParams, x: TimeSeries, grid: TimeGrid):
    """Mean vector ``m`` and lower-triangular ``V`` for the values at ``grid.new``.

    Both are laid out time-major: entry ``i * d + c`` is channel ``c`` at ``grid.new[i]``.
    """
    f = feature_vector(x, grid)
    if f.size != p.n_features:
        raise ShapeError(f"feature length {f.size} does not match augmenter input {p.n_features}")
    m = p.W_m @ f + p.b_m
    V = unpack_lower(p.W_V @ f + p.b_V, p.n_out)
    return m, V


def band_mask_matrix(n: int, alpha: int | None) -> np.ndarray:
    """0/1 mask keeping ``V[i, j]`` with ``0 <= i - j < alpha``."""
    if alpha is None:
        return np.tril(np.ones((n, n)))
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    i, j = np.indices((n, n))
    return ((i - j >= 0) & (i - j < alpha)).astype(np.float64)


def band_mask(V: np.ndarray, alpha: int | None) -> np.ndarray:
    """Zero the entries of ``V`` that would couple coordinates ``alpha`` or more apart."""
    return V * band_mask_matrix(V.shape[0], alpha)


def sample_series(m: np.ndarray, V: np.ndarray, K: int, rng: np.random.Generator):
    """Reparameterized draws ``V eps_k + m``. Returns ``(samples, eps)``, both ``(K, M')``."""
    if K < 1:
        raise ValueError("K must be at least 1")
    eps = rng.standard_normal((K, m.size))
    return eps @ V.T + m, eps


def interleave_values(x_values: np.ndarray, samples: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Merge ``(K, M*d)`` samples with the ``(N, d)`` original values, shape ``(K, N+M, d)``."""
    N, d = x_values.shape
    K = samples.shape[0]
    M = grid.new.size
    out = np.empty((K, N + M, d))
    out[:, grid.original_positions] = x_values
    out[:, grid.new_positions] = samples.reshape(K, M, d)
    return out


def interleave(x: TimeSeries, sample: np.ndarray, grid: TimeGrid) -> TimeSeries:
    """One merged series: original values at original times, ``sample`` at new times."""
    if not np.array_equal(grid.original, x.times):
        raise ValueError("grid does not belong to this series")
    vals = interleave_values(x.values, np.asarray(sample, dtype=np.float64).reshape(1, -1), grid)[0]
    return TimeSeries(grid.merged, vals)


def se_kernel(s, t, sigma: float, length: float) -> np.ndarray:
    diff = np.subtract.outer(np.asarray(s, dtype=np.float64), np.asarray(t, dtype=np.float64))
    return sigma * np.exp(-0.5 * diff**2 / length**2)


def gp_posterior(x: TimeSeries, new_times, sigma: float, length: float, noise: float):
    """GP posterior at ``new_times`` under a constant mean and squared-exponential kernel.

    The constant mean is the per-channel sample mean of ``x``.

    Returns:
        tuple: ``(mean, cov)`` with ``mean`` of shape ``(M, d)`` and ``cov`` of shape ``(M, M)``.
    """
    if isinstance(new_times, TimeGrid):
        new_times = new_times.new
    s = np.asarray(new_times, dtype=np.float64)
    t = x.times
    Ktt = se_kernel(t, t, sigma, length) + noise * np.eye(t.size)
    Kst = se_kernel(s, t, sigma, length)
    try:
        cf = linalg.cho_factor(Ktt, lower=True)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("kernel matrix is not positive definite") from exc
    prior = x.values.mean(axis=0)
    mean = prior + Kst @ linalg.cho_solve(cf, x.values - prior)
    cov = se_kernel(s, s, sigma, length) - Kst @ linalg.cho_solve(cf, Kst.T)
    return mean, 0.5 * (cov + cov.T)


def gp_log_marginal(x: TimeSeries, sigma: float, length: float, noise: float) -> float:
    t = x.times
    Ktt = se_kernel(t, t, sigma, length) + noise * np.eye(t.size)
    try:
        cf = linalg.cho_factor(Ktt, lower=True)
    except linalg.LinAlgError:
        return -np.inf
    r = x.values - x.values.mean(axis=0)
    alpha = linalg.cho_solve(cf, r)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    n, d = r.shape
    return float(-0.5 * np.sum(r * alpha) - 0.5 * d * logdet - 0.5 * n * d * np.log(2 * np.pi))


def fit_gp_hyper(x: TimeSeries, n_grid: int = 7):
    """``(sigma, length, noise)`` maximizing the log marginal likelihood on a log grid."""
    span = x.times[-1] - x.times[0]
    gap = float(np.mean(np.diff(x.times)))
    var = float(np.var(x.values)) or 1.0
    sigmas = var * np.logspace(-1, 1, n_grid)
    lengths = np.logspace(np.log10(gap), np.log10(span), n_grid)
    noises = var * np.logspace(-6, 0, n_grid)
    best, best_ll = None, -np.inf
    for sg, ln, nz in product(sigmas, lengths, noises):
        ll = gp_log_marginal(x, sg, ln, nz)
        if ll > best_ll:
            best, best_ll = (float(sg), float(ln), float(nz)), ll
    return best
