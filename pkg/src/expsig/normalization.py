"""Tensor normalization by dilation.

Each group-like tensor ``t`` is mapped to ``delta_lam(t) = (1, lam t^1, lam^2 t^2, ...)``
with ``lam`` the unique non-negative root of ``|delta_lam(t)|^2 = psi(|t|)``.
``psi`` is the identity (on squared norms) up to ``C`` and saturates at ``C (1 + 1/a)``
beyond, so every normalized tensor has norm at most ``R = sqrt(C (1 + 1/a))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._backend import kernel
from .signature import TimeSeries, signature
from .tensor_algebra import TruncTensor, dilation, level_index, level_norms_sq, tensor_norm


class SolverError(RuntimeError):
    """The dilation root solve did not reach the requested tolerance."""


@dataclass(frozen=True)
class NormConfig:
    C: float = 4.0
    a: float = 1.0
    solve_tol: float = 1e-12
    max_iter: int = 200

    def __post_init__(self):
        if self.C < 1.0:
            raise ValueError(f"C must be >= 1, got {self.C}")
        if self.a <= 0.0:
            raise ValueError(f"a must be > 0, got {self.a}")

    @property
    def R(self) -> float:
        """Upper bound on the norm of every normalized tensor."""
        return math.sqrt(self.C * (1.0 + 1.0 / self.a))


def psi(u, cfg: NormConfig):
    """Target squared norm for a tensor of norm ``u >= 1``."""
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < 1.0):
        raise ValueError("psi is defined on [1, inf)")
    x = u * u
    C, a = cfg.C, cfg.a
    with np.errstate(divide="ignore"):
        tail = C + C ** (1.0 + a) / a * (C**-a - x**-a)
    out = np.where(x <= C, x, tail)
    return float(out) if out.ndim == 0 else out


def psi_prime(u, cfg: NormConfig):
    """Derivative of :func:`psi`; the tail branch is used from ``u**2 >= C`` on."""
    u = np.asarray(u, dtype=np.float64)
    C, a = cfg.C, cfg.a
    out = np.where(u * u < C, 2.0 * u, 2.0 * C ** (1.0 + a) * u ** (-2.0 * a - 1.0))
    return float(out) if out.ndim == 0 else out


def _level_sq_batch(sigs: np.ndarray, dim: int, level: int) -> np.ndarray:
    idx = level_index(dim, level)
    out = np.zeros((sigs.shape[0], level + 1))
    for n in range(level + 1):
        out[:, n] = np.sum(sigs[:, idx == n] ** 2, axis=1)
    return out


def solve_lambda_batch(sigs: np.ndarray, dim: int, level: int, cfg: NormConfig) -> np.ndarray:
    """Dilation factors for a ``(B, size)`` batch of flat group-like tensors."""
    sigs = np.atleast_2d(np.asarray(sigs, dtype=np.float64))
    lsq = _level_sq_batch(sigs, dim, level)
    norm_sq = lsq.sum(axis=1)
    lam = np.ones(sigs.shape[0])
    tail = norm_sq > cfg.C
    if np.any(tail):
        target = np.asarray(psi(np.sqrt(norm_sq[tail]), cfg), dtype=np.float64).reshape(-1)
        sol, res, ok = kernel.solve_dilation(
            np.ascontiguousarray(lsq[tail, 1:]), target, cfg.solve_tol, cfg.max_iter
        )
        if not np.all(ok):
            raise SolverError(
                f"dilation solve did not converge: max residual {np.max(np.abs(res)):.3e}"
            )
        lam[tail] = sol
    return lam


def solve_lambda(t: TruncTensor, cfg: NormConfig) -> float:
    """Dilation factor ``lam(t)``; exactly 1 on the identity branch and for the unit."""
    if t.coeffs[0] != 1.0:
        raise ValueError("solve_lambda expects a group-like tensor")
    return float(solve_lambda_batch(t.coeffs[None], t.dim, t.level, cfg)[0])


def normalize(t: TruncTensor, cfg: NormConfig) -> tuple[TruncTensor, float]:
    lam = solve_lambda(t, cfg)
    return dilation(t, lam), lam


def lambda_gradient_batch(
    sigs: np.ndarray, lam: np.ndarray, dim: int, level: int, cfg: NormConfig
) -> np.ndarray:
    """Gradient of ``lam`` w.r.t. every flat coefficient (zero at level 0).

    Implicit differentiation of ``F(lam, t) = |delta_lam(t)|^2 - psi(|t|)``.
    """
    sigs = np.atleast_2d(sigs)
    idx = level_index(dim, level)
    lsq = _level_sq_batch(sigs, dim, level)
    norm = np.sqrt(lsq.sum(axis=1))
    n = np.arange(1, level + 1)
    denom = np.sum(n * lam[:, None] ** (2 * n - 1) * lsq[:, 1:], axis=1)
    if np.any(denom == 0.0):
        raise ZeroDivisionError("lambda gradient is singular at the unit tensor")
    dpsi = np.asarray(psi_prime(norm, cfg)).reshape(-1)
    factor = lam[:, None] ** (2 * idx) - (dpsi / (2.0 * norm))[:, None]
    grad = -sigs * factor / denom[:, None]
    grad[:, 0] = 0.0
    return grad


def lambda_gradient(t: TruncTensor, cfg: NormConfig) -> np.ndarray:
    """Flat gradient of ``lam`` with respect to ``t``; entry 0 (level 0) is zero."""
    if tensor_norm(t) == 1.0:
        raise ZeroDivisionError("lambda gradient is singular at the unit tensor")
    lam = np.array([solve_lambda(t, cfg)])
    return lambda_gradient_batch(t.coeffs[None], lam, t.dim, t.level, cfg)[0]


def normalize_batch(sigs: np.ndarray, dim: int, level: int, cfg: NormConfig):
    """Normalize a batch of flat signatures. Returns ``(normalized, lam)``."""
    lam = solve_lambda_batch(sigs, dim, level, cfg)
    scale = lam[:, None] ** level_index(dim, level)
    return sigs * scale, lam


def normalize_batch_vjp(
    sigs: np.ndarray, lam: np.ndarray, cotangent: np.ndarray, dim: int, level: int, cfg: NormConfig
) -> np.ndarray:
    """Pull a cotangent on the normalized tensors back to the raw signatures."""
    idx = level_index(dim, level)
    grad = cotangent * lam[:, None] ** idx
    d_lam = np.sum(cotangent * sigs * idx * lam[:, None] ** np.maximum(idx - 1, 0), axis=1)
    active = d_lam != 0.0
    if np.any(active):
        # identity-branch rows have a zero lambda gradient; skip them
        tail = active & (np.sum(sigs**2, axis=1) > cfg.C)
        if np.any(tail):
            g_lam = lambda_gradient_batch(sigs[tail], lam[tail], dim, level, cfg)
            grad[tail] += d_lam[tail, None] * g_lam
    return grad


def lambda_truncation_curve(x: TimeSeries, cfg: NormConfig, max_level: int) -> np.ndarray:
    """``lam`` of the level-L truncations of the signature of ``x`` for L = 1..max_level.

    Returns:
        np.ndarray: rows ``(L, lam_L)``.
    """
    if max_level < 1:
        raise ValueError("max_level must be at least 1")
    full = signature(x, max_level)
    lsq = level_norms_sq(full)
    rows = []
    for L in range(1, max_level + 1):
        coeffs = full.coeffs.copy()
        coeffs[level_index(full.dim, max_level) > L] = 0.0
        t = TruncTensor(full.dim, max_level, coeffs)
        rows.append((L, solve_lambda(t, cfg) if lsq[: L + 1].sum() > 0 else 1.0))
    return np.array(rows, dtype=np.float64)


def truncation_tail(total_variation: float, level: int, terms: int = 200) -> float:
    """``sum_{j > level} TV**j / j!`` evaluated in log space."""
    if total_variation == 0.0:
        return 0.0
    j = np.arange(level + 1, level + 1 + terms)
    logs = j * math.log(total_variation) - np.array([math.lgamma(k + 1.0) for k in j])
    return float(np.exp(logs).sum())


def truncation_rate(tail: float, first_level: int) -> float:
    """Shape of the truncation error bound, up to its constant."""
    return min(tail**0.25, tail**0.5) ** (1.0 / first_level)
