"""Normalized expected-signature estimator and the matching sample-size bound."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .normalization import NormConfig, normalize_batch
from .signature import TimeSeries, signature_batch, time_augment
from .tensor_algebra import TruncTensor


@dataclass(frozen=True, eq=False)
class ExpSigEstimate:
    mean_tensor: TruncTensor
    K: int
    lambdas: np.ndarray

    def features(self) -> np.ndarray:
        """Levels ``1..L`` as a flat feature vector."""
        return self.mean_tensor.coeffs[1:]


def _exact_mean(rows: np.ndarray) -> np.ndarray:
    # correctly rounded sums make the average independent of sample order
    return np.array([math.fsum(col) for col in rows.T]) / rows.shape[0]


def expected_signature(batch, level: int, cfg: NormConfig, augment: bool = True,
                       rescale_time: bool = True, normalized: bool = True) -> ExpSigEstimate:
    """Average of the (normalized) signatures of ``batch``.

    Each series is time-augmented (unless ``augment`` is off), signed to
    ``level``, normalized, then averaged component-wise. Series may differ
    in length but must share their dimension.
    """
    batch = list(batch)
    if not batch:
        raise ValueError("need at least one series")
    dims = {x.dim for x in batch}
    if len(dims) != 1:
        raise ValueError(f"series dimensions differ: {sorted(dims)}")
    paths = [time_augment(x, rescale_time) if augment else x for x in batch]
    dim = paths[0].dim
    lengths = {len(x) for x in paths}
    if len(lengths) == 1:
        sigs = signature_batch(np.stack([x.values for x in paths]), level)
    else:
        sigs = np.vstack([signature_batch(x.values[None], level) for x in paths])
    if normalized:
        sigs, lam = normalize_batch(sigs, dim, level, cfg)
    else:
        lam = np.ones(len(paths))
    mean = _exact_mean(sigs)
    mean[0] = 1.0
    return ExpSigEstimate(TruncTensor(dim, level, mean), len(paths), lam)


def hoeffding_sample_size(R: float, sigma: float, delta: float) -> int:
    """Smallest ``K`` with ``exp(-2 sigma^2 K / (2R)^2) <= delta``."""
    if sigma <= 0 or delta <= 0:
        raise ValueError("sigma and delta must be positive")
    if delta >= 1.0:
        return 0
    return math.ceil((2.0 * R) ** 2 * math.log(1.0 / delta) / (2.0 * sigma**2) - 1e-12)


def hoeffding_bound(R: float, sigma: float, K: int) -> float:
    """Upper bound on ``P(|estimate - mean| >= sigma)`` for ``K`` samples."""
    return math.exp(-2.0 * sigma**2 * K / (2.0 * R) ** 2)


def paths_to_series(times, paths) -> list[TimeSeries]:
    return [TimeSeries(times, p) for p in paths]
