"""Signatures of piecewise-linear time series and their vector-Jacobian products."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import kernel
from .tensor_algebra import ShapeError, TruncTensor, flat_size, tensor_mul


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Strictly increasing time stamps with one ``d``-dimensional value per stamp."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=np.float64).reshape(-1)
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != t.shape[0]:
            raise ShapeError(f"values shape {v.shape} does not match {t.shape[0]} time stamps")
        if t.shape[0] < 2:
            raise ValueError("a time series needs at least two points")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time stamps must be strictly increasing")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.times.shape[0]


def _as_series(x) -> TimeSeries:
    if isinstance(x, TimeSeries):
        return x
    v = np.asarray(x, dtype=np.float64)
    return TimeSeries(np.arange(v.shape[0], dtype=np.float64), v)


def signature(x, level: int) -> TruncTensor:
    """Truncated signature ``exp(x_1 - x_0) (x) ... (x) exp(x_N - x_{N-1})``.

    ``x`` is a :class:`TimeSeries` or a bare ``(N, d)`` array of values.
    """
    x = _as_series(x)
    if level < 1:
        raise ValueError("signature level must be at least 1")
    incr = np.diff(x.values, axis=0)[None]
    return TruncTensor(x.dim, level, kernel.sig_forward(incr, level)[0])


def signature_batch(paths: np.ndarray, level: int) -> np.ndarray:
    """Flat signatures of ``(B, N, d)`` value arrays, shape ``(B, size)``."""
    paths = np.asarray(paths, dtype=np.float64)
    return kernel.sig_forward(np.ascontiguousarray(np.diff(paths, axis=1)), level)


def signature_batch_vjp(paths: np.ndarray, level: int, cotangent: np.ndarray) -> np.ndarray:
    """Gradient of ``sum_b <sig(paths[b]), cotangent[b]>`` w.r.t. ``paths``."""
    paths = np.asarray(paths, dtype=np.float64)
    g_incr = kernel.sig_backward(
        np.ascontiguousarray(np.diff(paths, axis=1)), level, np.ascontiguousarray(cotangent)
    )
    out = np.zeros_like(paths)
    out[:, 1:] += g_incr
    out[:, :-1] -= g_incr
    return out


def signature_vjp(x, level: int, cotangent: TruncTensor) -> np.ndarray:
    """Gradient of ``<signature(x), cotangent>`` with respect to every value of ``x``.

    Uses a prefix/suffix sweep over the increment exponentials, so the cost is
    linear in the series length.

    Returns:
        np.ndarray: ``(N, d)`` array matching ``x.values``.
    """
    x = _as_series(x)
    c = cotangent.coeffs if isinstance(cotangent, TruncTensor) else np.asarray(cotangent)
    if c.shape[-1] != flat_size(x.dim, level):
        raise ShapeError("cotangent shape does not match the signature shape")
    return signature_batch_vjp(x.values[None], level, c.reshape(1, -1))[0]


def time_augment(x: TimeSeries, rescale: bool = True) -> TimeSeries:
    """Append time as the last channel, affinely mapped to [0, 1] when ``rescale``."""
    t = x.times
    chan = (t - t[0]) / (t[-1] - t[0]) if rescale else t
    return TimeSeries(t, np.column_stack([x.values, chan]))


def chen_concat(s_left: TruncTensor, s_right: TruncTensor) -> TruncTensor:
    """Signature of the concatenated path from the signatures of its pieces."""
    for s in (s_left, s_right):
        if s.coeffs[0] != 1.0:
            raise ValueError("chen_concat expects group-like tensors")
    return tensor_mul(s_left, s_right)


def total_variation(x) -> float:
    x = _as_series(x)
    return float(np.sum(np.linalg.norm(np.diff(x.values, axis=0), axis=1)))
