"""Dense truncated tensor algebra over R^d.

A :class:`TruncTensor` stores levels ``0..L`` in one flat float64 array; the
level-n block holds ``d**n`` coefficients in row-major multi-index order, so
``(i_1, ..., i_n)`` sits at ``i_1 * d**(n-1) + ... + i_n`` inside its block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._backend import kernel


class ShapeError(ValueError):
    """Raised when tensors of different dimension or truncation level meet."""


def level_offsets(dim: int, level: int) -> np.ndarray:
    """Start index of every level in the flat layout, plus the total size."""
    return np.concatenate([[0], np.cumsum([dim**n for n in range(level + 1)])]).astype(int)


def flat_size(dim: int, level: int) -> int:
    return int(level_offsets(dim, level)[-1])


def level_index(dim: int, level: int) -> np.ndarray:
    """Level number of every flat coefficient."""
    return np.repeat(np.arange(level + 1), [dim**n for n in range(level + 1)])


@dataclass(frozen=True, eq=False)
class TruncTensor:
    """Element of the truncated tensor algebra ``T_L(R^d)``."""

    dim: int
    level: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.dim < 1 or self.level < 0:
            raise ShapeError(f"invalid shape dim={self.dim}, level={self.level}")
        c = np.array(self.coeffs, dtype=np.float64).reshape(-1)
        if c.shape[0] != flat_size(self.dim, self.level):
            raise ShapeError(
                f"expected {flat_size(self.dim, self.level)} coefficients, got {c.shape[0]}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, dim: int, level: int) -> TruncTensor:
        return cls(dim, level, np.zeros(flat_size(dim, level)))

    @classmethod
    def unit(cls, dim: int, level: int) -> TruncTensor:
        c = np.zeros(flat_size(dim, level))
        c[0] = 1.0
        return cls(dim, level, c)

    @classmethod
    def from_levels(cls, levels) -> TruncTensor:
        """Build from ``[scalar, level-1 array, level-2 array, ...]``."""
        level = len(levels) - 1
        dim = np.asarray(levels[1]).size if level >= 1 else 1
        return cls(dim, level, np.concatenate([np.ravel(x) for x in levels]))

    def __getitem__(self, n: int) -> np.ndarray:
        """Level ``n`` as an array of shape ``(dim,) * n``."""
        if not 0 <= n <= self.level:
            raise IndexError(n)
        off = level_offsets(self.dim, self.level)
        return self.coeffs[off[n] : off[n + 1]].reshape((self.dim,) * n)

    @property
    def levels(self) -> list[np.ndarray]:
        return [self[n] for n in range(self.level + 1)]

    def _check(self, other: TruncTensor):
        if not isinstance(other, TruncTensor):
            raise TypeError(f"expected TruncTensor, got {type(other).__name__}")
        if (self.dim, self.level) != (other.dim, other.level):
            raise ShapeError(
                f"shape mismatch: (d={self.dim}, L={self.level}) vs (d={other.dim}, L={other.level})"
            )

    def __add__(self, other: TruncTensor) -> TruncTensor:
        return tensor_add(self, other)

    def __sub__(self, other: TruncTensor) -> TruncTensor:
        return tensor_add(self, tensor_scale(other, -1.0))

    def __mul__(self, c: float) -> TruncTensor:
        return tensor_scale(self, c)

    __rmul__ = __mul__

    def __matmul__(self, other: TruncTensor) -> TruncTensor:
        return tensor_mul(self, other)

    def allclose(self, other: TruncTensor, atol: float = 1e-12) -> bool:
        self._check(other)
        return bool(np.allclose(self.coeffs, other.coeffs, rtol=0.0, atol=atol))


def tensor_add(a: TruncTensor, b: TruncTensor) -> TruncTensor:
    a._check(b)
    return TruncTensor(a.dim, a.level, a.coeffs + b.coeffs)


def tensor_scale(a: TruncTensor, c: float) -> TruncTensor:
    return TruncTensor(a.dim, a.level, a.coeffs * float(c))


def tensor_mul(a: TruncTensor, b: TruncTensor) -> TruncTensor:
    """Truncated tensor product; products above level L are dropped."""
    a._check(b)
    return TruncTensor(a.dim, a.level, kernel.tensor_mul(a.coeffs, b.coeffs, a.dim, a.level))


def tensor_exp(v, level: int) -> TruncTensor:
    """``sum_{n<=L} v^{(x)n} / n!`` for a vector ``v``."""
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if level < 0:
        raise ShapeError("level must be non-negative")
    levels = [np.ones(1)]
    term = np.ones(1)
    for n in range(1, level + 1):
        term = np.multiply.outer(term, v).reshape(-1) / n
        levels.append(term)
    return TruncTensor(v.size, level, np.concatenate(levels))


def dilation(t: TruncTensor, lam: float) -> TruncTensor:
    """Scale level n by ``lam**n``; only defined for group-like tensors."""
    if t.coeffs[0] != 1.0:
        raise ValueError("dilation expects a group-like tensor (level 0 equal to 1)")
    scale = float(lam) ** level_index(t.dim, t.level)
    return TruncTensor(t.dim, t.level, t.coeffs * scale)


def tensor_norm(t: TruncTensor) -> float:
    """Euclidean norm over every coefficient, level 0 included."""
    return float(np.sqrt(np.dot(t.coeffs, t.coeffs)))


def level_norms_sq(t: TruncTensor) -> np.ndarray:
    """Squared Euclidean norm of each level ``0..L``."""
    return np.bincount(level_index(t.dim, t.level), weights=t.coeffs**2, minlength=t.level + 1)


def factorial_bound(total_variation: float, n: int) -> float:
    return total_variation**n / math.factorial(n)
