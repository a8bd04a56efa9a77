"""End-to-end expected-signature classifier.

Pipeline per input series: linear augmenter -> ``K`` reparameterized samples ->
interleave with the original points -> time augmentation -> signature ->
normalization -> component-wise average -> linear readout -> softmax.
Gradients are computed by hand, pathwise through the drawn ``eps``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .augmentation import (
    AugmenterParams,
    TimeGrid,
    band_mask_matrix,
    feature_vector,
    init_augmenter,
    interleave_values,
    make_grid,
    pack_lower,
    unpack_lower,
)
from .datasets import Dataset
from .normalization import NormConfig, normalize_batch, normalize_batch_vjp
from .signature import TimeSeries, signature_batch, signature_batch_vjp
from .tensor_algebra import ShapeError, flat_size

log = logging.getLogger(__name__)


@dataclass
class ModelHyper:
    L: int = 3
    K: int = 16
    C: float = 4.0
    a: float = 1.0
    alpha: int | None = None
    strategy: str = "midpoints"
    n_before: int = 0
    n_after: int = 0
    margin: float | None = None
    rescale_time: bool = True
    v_init_scale: float = 1e-2
    freeze_samples: bool = False
    seed: int = 0

    @property
    def norm_cfg(self) -> NormConfig:
        return NormConfig(C=self.C, a=self.a)


@dataclass
class TrainConfig:
    lr: float = 1e-2
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0


def feature_length(dim: int, level: int) -> int:
    """Readout input size: levels ``1..L`` of the time-augmented signature."""
    return flat_size(dim + 1, level) - 1


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


@dataclass(eq=False)
class GradBundle:
    W_m: np.ndarray
    b_m: np.ndarray
    W_V: np.ndarray
    b_V: np.ndarray
    readout_W: np.ndarray
    readout_b: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def add_(self, other: GradBundle) -> GradBundle:
        for name, arr in self.arrays().items():
            arr += getattr(other, name)
        return self

    def scale_(self, c: float) -> GradBundle:
        for arr in self.arrays().values():
            arr *= c
        return self

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays().values()])


@dataclass(eq=False)
class ModelParams:
    augmenter: AugmenterParams
    readout_W: np.ndarray
    readout_b: np.ndarray
    hyper: ModelHyper
    n_points: int
    dim: int

    kind = "expsig"

    @property
    def n_classes(self) -> int:
        return self.readout_W.shape[0]

    @property
    def norm_cfg(self) -> NormConfig:
        return self.hyper.norm_cfg

    def grid_for(self, x: TimeSeries) -> TimeGrid:
        h = self.hyper
        return make_grid(x.times, h.strategy, h.n_before, h.n_after, h.margin)

    def arrays(self) -> dict[str, np.ndarray]:
        a = self.augmenter
        return {"W_m": a.W_m, "b_m": a.b_m, "W_V": a.W_V, "b_V": a.b_V,
                "readout_W": self.readout_W, "readout_b": self.readout_b}

    def copy(self) -> ModelParams:
        return ModelParams(self.augmenter.copy(), self.readout_W.copy(), self.readout_b.copy(),
                           replace(self.hyper), self.n_points, self.dim)

    def zero_grad(self) -> GradBundle:
        return GradBundle(**{k: np.zeros_like(v) for k, v in self.arrays().items()})

    def apply_(self, grad: GradBundle, lr: float) -> None:
        for name, arr in self.arrays().items():
            arr -= lr * getattr(grad, name)

    # uniform interface used by train_sgd / evaluation
    def loss_and_grad(self, x, label, rng):
        return loss_and_grad(self, x, label, rng)

    def predict_proba(self, x, rng):
        return forward(self, x, rng)


def init_params(hyper: ModelHyper, x_ref: TimeSeries, n_classes: int) -> ModelParams:
    """Fresh parameters for series shaped like ``x_ref`` (length and dimension)."""
    if n_classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng([hyper.seed, 7919])
    grid = make_grid(x_ref.times, hyper.strategy, hyper.n_before, hyper.n_after, hyper.margin)
    aug = init_augmenter(x_ref, grid, rng, hyper.v_init_scale)
    P = feature_length(x_ref.dim, hyper.L)
    return ModelParams(aug, np.zeros((n_classes, P)), np.zeros(n_classes), replace(hyper),
                       len(x_ref), x_ref.dim)


@dataclass(eq=False)
class _Cache:
    f: np.ndarray
    grid: TimeGrid
    mask: np.ndarray
    eps: np.ndarray
    aug: np.ndarray
    sigs: np.ndarray
    lam: np.ndarray
    phi: np.ndarray
    probs: np.ndarray


def _check_input(p: ModelParams, x: TimeSeries):
    if x.dim != p.dim or len(x) != p.n_points:
        raise ShapeError(
            f"model expects series of length {p.n_points} and dim {p.dim}, got {len(x)} x {x.dim}"
        )


def _forward_core(p: ModelParams, x: TimeSeries, eps: np.ndarray) -> _Cache:
    """``eps`` has shape ``(R, K, M')``; one probability vector per leading run."""
    _check_input(p, x)
    h = p.hyper
    grid = p.grid_for(x)
    f = feature_vector(x, grid)
    aug_p = p.augmenter
    n_out = aug_p.n_out
    mask = band_mask_matrix(n_out, h.alpha)
    m = aug_p.W_m @ f + aug_p.b_m
    V = unpack_lower(aug_p.W_V @ f + aug_p.b_V, n_out) * mask
    R, K, _ = eps.shape
    y = eps.reshape(R * K, n_out) @ V.T + m
    vals = interleave_values(x.values, y, grid)
    merged = grid.merged
    tchan = (merged - merged[0]) / (merged[-1] - merged[0]) if h.rescale_time else merged
    aug = np.concatenate([vals, np.broadcast_to(tchan[None, :, None], vals.shape[:2] + (1,))], axis=2)
    sigs = signature_batch(aug, h.L)
    normed, lam = normalize_batch(sigs, p.dim + 1, h.L, p.norm_cfg)
    phi = normed.reshape(R, K, -1).mean(axis=1)[:, 1:]
    probs = softmax(phi @ p.readout_W.T + p.readout_b)
    return _Cache(f, grid, mask, eps, aug, sigs, lam, phi, probs)


def _backward(p: ModelParams, c: _Cache, dlogits: np.ndarray) -> GradBundle:
    h = p.hyper
    phi = c.phi[0]
    K = c.eps.shape[1]
    dW = np.outer(dlogits, phi)
    dphi = p.readout_W.T @ dlogits
    dnormed = np.zeros_like(c.sigs)
    dnormed[:, 1:] = dphi / K
    dsigs = normalize_batch_vjp(c.sigs, c.lam, dnormed, p.dim + 1, h.L, p.norm_cfg)
    daug = signature_batch_vjp(c.aug, h.L, dsigs)
    dy = daug[:, c.grid.new_positions, : p.dim].reshape(K, -1)
    dm = dy.sum(axis=0)
    dV = (dy.T @ c.eps[0]) * c.mask
    dpacked = pack_lower(dV)
    return GradBundle(np.outer(dm, c.f), dm, np.outer(dpacked, c.f), dpacked, dW, dlogits.copy())


def draw_eps(p: ModelParams, rng: np.random.Generator, runs: int | None = None) -> np.ndarray:
    shape = (p.hyper.K, p.augmenter.n_out)
    eps = rng.standard_normal(shape if runs is None else (runs,) + shape)
    return eps[None] if runs is None else eps


def forward(p: ModelParams, x: TimeSeries, rng: np.random.Generator) -> np.ndarray:
    """Class probabilities for ``x``; deterministic given ``rng``'s state."""
    return _forward_core(p, x, draw_eps(p, rng)).probs[0]


def forward_runs(p: ModelParams, x: TimeSeries, eps: np.ndarray) -> np.ndarray:
    """Probabilities for several independent ``(K, M')`` draws at once, shape ``(R, D)``."""
    return _forward_core(p, x, eps).probs


def loss_and_grad_eps(p: ModelParams, x: TimeSeries, label: int, eps: np.ndarray):
    """Cross-entropy and its exact gradient for one fixed ``(K, M')`` draw."""
    if not 0 <= label < p.n_classes:
        raise ValueError(f"label {label} outside 0..{p.n_classes - 1}")
    c = _forward_core(p, x, eps.reshape((1,) + eps.shape[-2:]))
    probs = c.probs[0]
    loss = -float(np.log(max(probs[label], 1e-300)))
    dlogits = probs.copy()
    dlogits[label] -= 1.0
    return loss, _backward(p, c, dlogits), probs


def loss_and_grad(p: ModelParams, x: TimeSeries, label: int, rng: np.random.Generator):
    """Returns ``(loss, GradBundle, probs)`` for one series and one Monte-Carlo draw."""
    return loss_and_grad_eps(p, x, label, draw_eps(p, rng)[0])


def weighted_accuracy(preds, truth, n_classes: int | None = None) -> float:
    """Mean per-class recall."""
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    if preds.shape != truth.shape:
        raise ValueError("preds and truth must have equal length")
    classes = range(n_classes) if n_classes is not None else np.unique(truth)
    recalls = []
    for k in classes:
        sel = truth == k
        if not np.any(sel):
            raise ValueError(f"class {k} has no samples in truth")
        recalls.append(np.mean(preds[sel] == k))
    return float(np.mean(recalls))


def _sample_rng(seed: int, epoch: int, index: int, freeze: bool) -> np.random.Generator:
    return np.random.default_rng([seed, 0 if freeze else epoch + 1, index])


def train_sgd(p, data: Dataset, cfg: TrainConfig, val: Dataset | None = None):
    """Minibatch SGD with per-epoch shuffling; returns ``(trained_params, history)``.

    ``p`` is left untouched. History rows carry epoch, mean loss, train weighted
    accuracy (from the predictions made during the epoch) and, if ``val`` is
    given, validation weighted accuracy.
    """
    if len(data) == 0:
        raise ValueError("empty training set")
    p = p.copy()
    freeze = getattr(getattr(p, "hyper", None), "freeze_samples", False)
    shuffler = np.random.default_rng([cfg.seed, 104729])
    history = []
    labels = data.labels
    for epoch in range(cfg.epochs):
        order = shuffler.permutation(len(data))
        losses = np.empty(len(data))
        preds = np.empty(len(data), dtype=int)
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            total = None
            for i in batch:
                x, y = data.items[i]
                loss, g, probs = p.loss_and_grad(x, y, _sample_rng(cfg.seed, epoch, int(i), freeze))
                if not np.isfinite(loss):
                    raise FloatingPointError(
                        f"non-finite loss at epoch {epoch}, sample {i} (label {y}); "
                        "consider a smaller learning rate or a tighter normalization C"
                    )
                losses[i] = loss
                preds[i] = int(np.argmax(probs))
                total = g if total is None else total.add_(g)
            total.scale_(1.0 / len(batch))
            p.apply_(total, cfg.lr)
        row = {"epoch": epoch + 1, "loss": float(losses.mean()),
               "train_wacc": weighted_accuracy(preds, labels, data.class_count)}
        if val is not None:
            row["val_wacc"] = evaluate(p, val, seed=cfg.seed)["wacc"]
        log.info("epoch %s", row)
        history.append(row)
    return p, history


def predict_dataset(p, data: Dataset, seed: int = 0, run: int = 0) -> np.ndarray:
    """``(n, D)`` probabilities; sample ``i`` of run ``r`` uses rng ``[seed, r, i]``."""
    return np.array([
        p.predict_proba(x, np.random.default_rng([seed, 7, run, i]))
        for i, (x, _) in enumerate(data.items)
    ])


def evaluate(p, data: Dataset, seed: int = 0, runs: int = 1) -> dict:
    """Accuracy and weighted accuracy averaged over ``runs`` stochastic passes."""
    accs, waccs = [], []
    for r in range(runs):
        preds = predict_dataset(p, data, seed, r).argmax(axis=1)
        accs.append(float(np.mean(preds == data.labels)))
        waccs.append(weighted_accuracy(preds, data.labels, data.class_count))
    return {"acc": float(np.mean(accs)), "wacc": float(np.mean(waccs)),
            "acc_runs": accs, "wacc_runs": waccs}


def stratified_folds(labels, folds: int, seed: int) -> np.ndarray:
    """Fold id per sample: each class shuffled, then dealt round-robin."""
    labels = np.asarray(labels)
    if folds < 2:
        raise ValueError("need at least two folds")
    rng = np.random.default_rng([seed, 31337])
    out = np.empty(labels.size, dtype=int)
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        if idx.size < folds:
            raise ValueError(f"class {k} has {idx.size} samples, fewer than {folds} folds")
        out[rng.permutation(idx)] = np.arange(idx.size) % folds
    return out


def expand_grid(space: dict) -> list[dict]:
    keys = list(space)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(space[k] for k in keys))]


def build_model(kind: str, hyper: ModelHyper, x_ref: TimeSeries, n_classes: int):
    if kind == "expsig":
        return init_params(hyper, x_ref, n_classes)
    from .baselines import init_readout

    return init_readout(kind, hyper, x_ref, n_classes)


def grid_search_cv(space: dict, data: Dataset, folds: int, train_cfg: TrainConfig,
                   base: ModelHyper | None = None, kind: str = "expsig", seed: int = 0):
    """Stratified k-fold search; returns ``(best_point, table)``.

    ``space`` maps :class:`ModelHyper` or :class:`TrainConfig` field names to
    candidate lists. Each table row holds the point and its mean validation
    weighted accuracy.
    """
    base = base or ModelHyper()
    fold_id = stratified_folds(data.labels, folds, seed)
    hyper_names = {f.name for f in fields(ModelHyper)}
    train_names = {f.name for f in fields(TrainConfig)}
    table = []
    for point in expand_grid(space):
        unknown = set(point) - hyper_names - train_names
        if unknown:
            raise KeyError(f"unknown grid keys {sorted(unknown)}")
        hyper = replace(base, **{k: v for k, v in point.items() if k in hyper_names})
        tcfg = replace(train_cfg, **{k: v for k, v in point.items() if k in train_names})
        scores = []
        for k in range(folds):
            tr = data.subset(np.flatnonzero(fold_id != k))
            va = data.subset(np.flatnonzero(fold_id == k))
            model = build_model(kind, hyper, tr.items[0][0], data.class_count)
            model, _ = train_sgd(model, tr, tcfg)
            scores.append(evaluate(model, va, seed=seed)["wacc"])
        table.append({**point, "val_wacc": float(np.mean(scores)), "fold_wacc": scores})
    best = max(range(len(table)), key=lambda i: (table[i]["val_wacc"], -i))
    return dict(expand_grid(space)[best]), table


@dataclass
class VarianceReport:
    norms: np.ndarray
    hist_counts: np.ndarray
    hist_edges: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def median(self) -> float:
        return float(np.median(self.norms))


def output_variance_analysis(p, test: Dataset, runs: int = 50, seed: int = 0,
                             bins: int = 20) -> VarianceReport:
    """Spectral norm of the ``D x D`` covariance of ``runs`` output vectors, per test series."""
    norms = np.empty(len(test))
    for i, (x, _) in enumerate(test.items):
        if isinstance(p, ModelParams):
            rng = np.random.default_rng([seed, 11, i])
            probs = forward_runs(p, x, draw_eps(p, rng, runs))
        else:
            probs = np.array([p.predict_proba(x, None) for _ in range(runs)])
        cov = np.cov(probs, rowvar=False, ddof=0) if runs > 1 else np.zeros((probs.shape[1],) * 2)
        norms[i] = np.linalg.norm(np.atleast_2d(cov), 2)
    hi = norms.max() if norms.max() > 0 else 1.0
    counts, edges = np.histogram(norms, bins=bins, range=(0.0, hi))
    return VarianceReport(norms, counts, edges)


def with_hyper(p: ModelParams, **changes) -> ModelParams:
    """Copy of ``p`` with sampling-only hyperparameters (``K``, ``alpha``...) changed."""
    q = p.copy()
    q.hyper = replace(q.hyper, **changes)
    return q


def hyper_dict(h) -> dict:
    return asdict(h)


__all__ = [
    "GradBundle", "ModelHyper", "ModelParams", "TrainConfig", "VarianceReport",
    "build_model", "evaluate", "expand_grid", "feature_length", "forward", "forward_runs",
    "grid_search_cv", "init_params", "loss_and_grad", "loss_and_grad_eps",
    "output_variance_analysis", "predict_dataset", "softmax", "stratified_folds",
    "train_sgd", "weighted_accuracy", "with_hyper", "draw_eps",
]
