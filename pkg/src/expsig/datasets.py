"""Synthetic stochastic-process datasets and a TSV loader/writer.

Generators return ``(times, paths)`` with ``paths`` of shape ``(n, N)``; every
path starts at the configured initial value on a uniform grid over ``[0, T]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .signature import TimeSeries


@dataclass(eq=False)
class Dataset:
    items: list[tuple[TimeSeries, int]]
    name: str = "dataset"
    class_count: int = 0

    def __post_init__(self):
        if not self.class_count:
            self.class_count = int(max(lbl for _, lbl in self.items)) + 1 if self.items else 0
        self.validate()

    def validate(self):
        if not self.items:
            return
        dims = {x.dim for x, _ in self.items}
        if len(dims) != 1:
            raise ValueError(f"series dimensions differ: {sorted(dims)}")
        labels = self.labels
        if labels.min() < 0 or labels.max() >= self.class_count:
            raise ValueError("labels must lie in 0..class_count-1")
        missing = set(range(self.class_count)) - set(labels.tolist())
        if missing:
            raise ValueError(f"classes without any series: {sorted(missing)}")

    @property
    def labels(self) -> np.ndarray:
        return np.array([lbl for _, lbl in self.items], dtype=int)

    @property
    def series(self) -> list[TimeSeries]:
        return [x for x, _ in self.items]

    @property
    def dim(self) -> int:
        return self.items[0][0].dim

    def __len__(self) -> int:
        return len(self.items)

    def subset(self, idx, name: str | None = None) -> Dataset:
        """Items at ``idx``; the class count is kept, so every class must remain present."""
        return Dataset([self.items[i] for i in idx], name or self.name, self.class_count)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def uniform_times(N: int, T: float = 1.0) -> np.ndarray:
    return np.linspace(0.0, T, N)


def gen_bm(n: int, N: int = 50, T: float = 1.0, seed=0):
    """Standard Brownian motion started at 0."""
    if N < 2:
        raise ValueError("N must be at least 2")
    rng = _rng(seed)
    t = uniform_times(N, T)
    dB = rng.standard_normal((n, N - 1)) * np.sqrt(np.diff(t))
    return t, np.concatenate([np.zeros((n, 1)), np.cumsum(dB, axis=1)], axis=1)


def gen_fbm(n: int, H: float, N: int = 50, T: float = 1.0, seed=0):
    """Fractional Brownian motion by Cholesky factorization of its covariance."""
    if not 0.0 < H < 1.0:
        raise ValueError("Hurst parameter must lie in (0, 1)")
    rng = _rng(seed)
    t = uniform_times(N, T)
    s = t[1:]
    cov = 0.5 * (s[:, None] ** (2 * H) + s[None, :] ** (2 * H) - np.abs(s[:, None] - s[None, :]) ** (2 * H))
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"fBm covariance not positive definite for H={H}, N={N}") from exc
    paths = rng.standard_normal((n, N - 1)) @ chol.T
    return t, np.concatenate([np.zeros((n, 1)), paths], axis=1)


def gen_gbm(n: int, mu: float = 0.5, sigma: float = 0.5, x0: float = 1.0, N: int = 50,
            T: float = 1.0, seed=0):
    """Geometric Brownian motion via the exact log-normal transition."""
    rng = _rng(seed)
    t = uniform_times(N, T)
    dt = np.diff(t)
    steps = (mu - 0.5 * sigma**2) * dt + sigma * np.sqrt(dt) * rng.standard_normal((n, N - 1))
    logx = np.concatenate([np.zeros((n, 1)), np.cumsum(steps, axis=1)], axis=1)
    return t, x0 * np.exp(logx)


def gen_ou(n: int, alpha: float = 1.0, gamma: float = 0.0, beta: float = 0.5, x0: float = 1.0,
           N: int = 50, T: float = 1.0, seed=0):
    """Ornstein-Uhlenbeck process via its exact Gaussian transition."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = _rng(seed)
    t = uniform_times(N, T)
    X = np.empty((n, N))
    X[:, 0] = x0
    xi = rng.standard_normal((n, N - 1))
    for i, dt in enumerate(np.diff(t)):
        e = math.exp(-alpha * dt)
        sd = beta * math.sqrt((1.0 - e * e) / (2.0 * alpha))
        X[:, i + 1] = gamma + (X[:, i] - gamma) * e + sd * xi[:, i]
    return t, X


def gen_nonlinear_sde(n: int, x0: float = 0.0, N: int = 50, T: float = 1.0, seed=0,
                      refine: int = 10, noise_scale: float = 1.0):
    """``dX = (sqrt(1+X^2) + X/2) dt + sqrt(1+X^2) dB`` by Euler-Maruyama.

    Integrated on a grid ``refine`` times finer than the output and subsampled.
    """
    if refine < 1:
        raise ValueError("refine must be at least 1")
    rng = _rng(seed)
    t = uniform_times(N, T)
    h = T / ((N - 1) * refine)
    X = np.empty((n, N))
    X[:, 0] = x0
    x = np.full(n, float(x0))
    dB = rng.standard_normal((n, (N - 1) * refine)) * math.sqrt(h)
    for k in range((N - 1) * refine):
        root = np.sqrt(1.0 + x * x)
        x = x + (root + 0.5 * x) * h + noise_scale * root * dB[:, k]
        if (k + 1) % refine == 0:
            X[:, (k + 1) // refine] = x
    return t, X


def smooth_signal(t):
    t = np.asarray(t, dtype=np.float64)
    return 6.0 * np.sin(4 * np.pi * t) ** 3 * np.cos(4 * np.pi * t) ** 2


def gen_noisy_smooth(n: int, noise_std: float = 0.3, N: int = 50, seed=0):
    """``6 sin^3(4 pi t) cos^2(4 pi t)`` on [0, 1] plus i.i.d. Gaussian noise."""
    rng = _rng(seed)
    t = uniform_times(N, 1.0)
    return t, smooth_signal(t)[None, :] + noise_std * rng.standard_normal((n, N))


@dataclass(frozen=True, eq=False)
class MomentMatchedSample:
    """Endpoints of ``X_t = t N`` and ``Y_t = t M`` on [0, 1]; rows are 2-vectors."""

    N: np.ndarray
    M: np.ndarray
    acceptance_rate: float

    def series(self, which: str = "X") -> list[TimeSeries]:
        ends = self.N if which == "X" else self.M
        t = np.array([0.0, 1.0])
        return [TimeSeries(t, np.vstack([np.zeros(2), e])) for e in ends]


def gen_moment_matched_pair(n: int, seed=0, max_rounds: int = 1000) -> MomentMatchedSample:
    """Lognormal pair versus its sine-perturbed twin with identical moments.

    ``N_i = exp(xi_i)``; each ``M_i`` is drawn by rejection against the envelope
    ``2 p`` of the density ``p(m) (1 + sin(2 pi log m))``, coordinate-wise.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = _rng(seed)
    N = np.exp(rng.standard_normal((n, 2)))
    M = np.empty((n, 2))
    proposed = accepted = 0
    for c in range(2):
        got = 0
        for _ in range(max_rounds):
            need = n - got
            if need == 0:
                break
            xi = rng.standard_normal(2 * need + 16)
            keep = rng.uniform(size=xi.size) < 0.5 * (1.0 + np.sin(2 * np.pi * xi))
            proposed += xi.size
            accepted += int(keep.sum())
            take = np.exp(xi[keep])[:need]
            M[got : got + take.size, c] = take
            got += take.size
        if got < n:
            raise RuntimeError("rejection sampler stalled")
    return MomentMatchedSample(N, M, accepted / proposed)


@dataclass
class TaskParams:
    """Class parameters for the synthetic tasks; all unspecified upstream, so tunable."""

    N: int = 50
    T: float = 1.0
    fbm_hurst: tuple = (0.3, 0.7)
    ou_classes: tuple = ((1.0, 0.0, 0.5), (4.0, 0.0, 0.5))
    ou_x0: float = 1.0
    bidim_fbm_hurst: float = 0.3
    gbm: tuple = (0.5, 0.5)
    bidim_ou: tuple = (2.0, 0.0, 0.5)
    noise_std: float = 0.3
    extra: dict = field(default_factory=dict)


TASKS = ("fbm", "ou", "bidim")
BIDIM_PROCESSES = ("bm", "fbm", "gbm", "ou", "nonlinear", "noisy_smooth")


def _class_paths(task: str, cls: int, n: int, rng, p: TaskParams):
    if task == "fbm":
        return gen_fbm(n, p.fbm_hurst[cls], p.N, p.T, rng)
    if task == "ou":
        a, g, b = p.ou_classes[cls]
        return gen_ou(n, a, g, b, p.ou_x0, p.N, p.T, rng)
    kind = BIDIM_PROCESSES[cls]
    if kind == "bm":
        return gen_bm(n, p.N, p.T, rng)
    if kind == "fbm":
        return gen_fbm(n, p.bidim_fbm_hurst, p.N, p.T, rng)
    if kind == "gbm":
        return gen_gbm(n, p.gbm[0], p.gbm[1], 1.0, p.N, p.T, rng)
    if kind == "ou":
        a, g, b = p.bidim_ou
        return gen_ou(n, a, g, b, 0.0, p.N, p.T, rng)
    if kind == "nonlinear":
        return gen_nonlinear_sde(n, 0.0, p.N, p.T, rng)
    t, x = gen_noisy_smooth(n, p.noise_std, p.N, rng)
    return t * p.T, x


def make_task(task: str, seed=0, n_train: int = 200, n_test: int = 200,
              params: TaskParams | None = None) -> tuple[Dataset, Dataset]:
    """Balanced train/test split of one synthetic task (per-class sizes)."""
    task = task.lower()
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; choose from {TASKS}")
    p = params or TaskParams()
    n_classes = len(BIDIM_PROCESSES) if task == "bidim" else 2
    rng = np.random.default_rng(seed)
    train, test = [], []
    n = n_train + n_test
    for cls in range(n_classes):
        if task == "bidim":
            t, a = _class_paths(task, cls, n, rng, p)
            _, b = _class_paths(task, cls, n, rng, p)
            vals = np.stack([a, b], axis=-1)
        else:
            t, a = _class_paths(task, cls, n, rng, p)
            vals = a[:, :, None]
        items = [(TimeSeries(t, v), cls) for v in vals]
        train += items[:n_train]
        test += items[n_train:]
    name = task.upper() if task != "bidim" else "Bidim"
    return (Dataset(train, f"{name}-train", n_classes), Dataset(test, f"{name}-test", n_classes))


def assemble_tasks(seed=0, n_train: int = 200, n_test: int = 200,
                   params: TaskParams | None = None) -> dict[str, tuple[Dataset, Dataset]]:
    """The FBM, OU and Bidim tasks, each with its own child seed."""
    children = np.random.SeedSequence(seed).spawn(len(TASKS))
    return {
        name: make_task(name, child, n_train, n_test, params)
        for name, child in zip(("FBM", "OU", "Bidim"), children)
    }


class TSVFormatError(ValueError):
    pass


def write_tsv(data: Dataset, path) -> None:
    """Write ``label<TAB>values...``; a header records dimension and time stamps.

    Values are written time-major (point ``i``, channel ``c`` at position ``i*d + c``).
    """
    path = Path(path)
    times = data.items[0][0].times
    lines = ["# expsig-tsv 1", f"# dim {data.dim}", f"# classes {data.class_count}",
             "# times " + ",".join(repr(float(v)) for v in times)]
    for x, lbl in data.items:
        if not np.array_equal(x.times, times):
            raise ValueError("all series must share their time stamps to be written as TSV")
        lines.append("\t".join([str(int(lbl))] + [repr(float(v)) for v in x.values.reshape(-1)]))
    path.write_text("\n".join(lines) + "\n")


def _label_key(s: str):
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


def load_tsv(path, labels: dict | None = None, name: str | None = None) -> Dataset:
    """Load ``label, v_1, ..., v_N`` rows separated by tabs or commas.

    Plain files (no ``#`` header) are univariate on a uniform grid over [0, 1];
    labels are mapped to ``0..D-1`` in sorted order unless ``labels`` is given.
    """
    path = Path(path)
    dim, times, class_count = 1, None, None
    rows = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split(None, 1)
            if len(parts) == 2 and parts[0] == "dim":
                dim = int(parts[1])
            elif len(parts) == 2 and parts[0] == "times":
                times = np.array([float(v) for v in parts[1].split(",")])
            elif len(parts) == 2 and parts[0] == "classes":
                class_count = int(parts[1])
            continue
        tokens = line.replace(",", "\t").split()
        try:
            vals = [float(tok) for tok in tokens[1:]]
        except ValueError as exc:
            raise TSVFormatError(f"{path}:{lineno}: unparseable value ({exc})") from None
        rows.append((lineno, tokens[0], vals))
    if not rows:
        raise TSVFormatError(f"{path}: no data rows")
    width = len(rows[0][2])
    for lineno, _, vals in rows:
        if len(vals) != width:
            raise TSVFormatError(f"{path}:{lineno}: ragged row ({len(vals)} values, expected {width})")
    if width % dim:
        raise TSVFormatError(f"{path}: row width {width} not divisible by dim {dim}")
    n_points = width // dim
    if times is None:
        times = np.linspace(0.0, 1.0, n_points)
    if times.size != n_points:
        raise TSVFormatError(f"{path}: header lists {times.size} times for {n_points} points")
    if labels is None:
        uniq = sorted({lbl for _, lbl, _ in rows}, key=_label_key)
        labels = {lbl: i for i, lbl in enumerate(uniq)}
    items = []
    for lineno, lbl, vals in rows:
        if lbl not in labels:
            raise TSVFormatError(f"{path}:{lineno}: unknown label {lbl!r}")
        items.append((TimeSeries(times, np.array(vals).reshape(n_points, dim)), labels[lbl]))
    count = class_count or (max(labels.values()) + 1)
    return Dataset(items, name or path.stem, count)
