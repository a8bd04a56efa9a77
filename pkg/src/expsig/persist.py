"""Text formats: the key-value training config and the JSON model file.

Config format
-------------
One ``key = value`` per line; ``#`` starts a comment; blank lines are ignored.
Keys are the fields of :class:`~expsig.model.ModelHyper` and
:class:`~expsig.model.TrainConfig` plus ``folds`` and ``M``. ``none`` stands for
an absent optional value (``alpha = none``). Keys of the form ``grid.<key>``
take a comma-separated list and define a hyperparameter search space. Unknown
keys are rejected.

``M`` is not a free parameter: the number of new time instants follows from the
strategy and the series length. When given, it is checked against the data at
training time.

Model format (version 1)
------------------------
A JSON object whose keys appear in this order::

    format    "expsig-model"
    version   1
    kind      "expsig" | "noaug" | "fft" | "cs" | "gp"
    dim       channel count d of the input series
    n_points  series length N the augmenter was built for (0 for readouts)
    hyper     ModelHyper fields, declaration order
    arrays    name -> {"shape": [...], "data": [row-major floats]}

Array order for ``expsig``: W_m, b_m, W_V, b_V, readout_W, readout_b. For the
readout baselines: W, b. Floats are written with ``repr`` so they round-trip
bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .augmentation import AugmenterParams
from .baselines import PREPROCESSORS, ReadoutParams
from .model import ModelHyper, ModelParams, TrainConfig

FORMAT_NAME = "expsig-model"
FORMAT_VERSION = 1
_EXPSIG_ARRAYS = ("W_m", "b_m", "W_V", "b_V", "readout_W", "readout_b")
_READOUT_ARRAYS = ("W", "b")


class ConfigError(ValueError):
    """Malformed or unknown entry in a config file."""


class ModelFormatError(ValueError):
    """A model file that does not match the documented layout."""


@dataclass
class RunConfig:
    hyper: ModelHyper = field(default_factory=ModelHyper)
    train: TrainConfig = field(default_factory=TrainConfig)
    folds: int = 0
    M: int | None = None
    grid: dict = field(default_factory=dict)

    def with_seed(self, seed: int) -> RunConfig:
        return RunConfig(replace(self.hyper, seed=seed), replace(self.train, seed=seed),
                         self.folds, self.M, dict(self.grid))


def _field_types(cls) -> dict[str, type]:
    defaults = cls()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(cls)}


_OPTIONAL_INT = {"alpha", "M"}
_OPTIONAL_FLOAT = {"margin"}


def _parse_scalar(key: str, text: str, kind: type | None, where: str):
    text = text.strip()
    try:
        if text.lower() == "none":
            if key in _OPTIONAL_INT or key in _OPTIONAL_FLOAT:
                return None
            raise ValueError("none is not allowed here")
        if key in _OPTIONAL_INT:
            return int(text)
        if key in _OPTIONAL_FLOAT:
            return float(text)
        if kind is bool:
            low = text.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(f"expected a boolean, got {text!r}")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    hyper_t = _field_types(ModelHyper)
    train_t = _field_types(TrainConfig)
    extra_t = {"folds": int, "M": int}
    known = {**hyper_t, **train_t, **extra_t}
    hyper, train, extra, grid = {}, {}, {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("grid."):
            name = key[5:]
            if name not in hyper_t and name not in train_t:
                raise ConfigError(f"{where}: unknown grid key {name!r}")
            grid[name] = [_parse_scalar(name, v, known[name], where) for v in value.split(",")]
            continue
        if key not in known:
            raise ConfigError(f"{where}: unknown key {key!r}")
        parsed = _parse_scalar(key, value, known[key], where)
        # seed is shared by the model and the training loop
        if key in hyper_t:
            hyper[key] = parsed
        if key in train_t:
            train[key] = parsed
        if key in extra_t:
            extra[key] = parsed
    cfg = RunConfig(ModelHyper(**hyper), TrainConfig(**train), extra.get("folds", 0),
                    extra.get("M"), grid)
    validate_config(cfg, source)
    return cfg


def validate_config(cfg: RunConfig, source: str = "<config>") -> None:
    h, t = cfg.hyper, cfg.train
    problems = []
    if h.L < 1:
        problems.append("L must be at least 1")
    if h.K < 1:
        problems.append("K must be at least 1")
    if h.C < 1 or h.a <= 0:
        problems.append("need C >= 1 and a > 0")
    if h.alpha is not None and h.alpha < 0:
        problems.append("alpha must be non-negative")
    if h.strategy not in ("midpoints", "extended"):
        problems.append(f"unknown strategy {h.strategy!r}")
    if t.batch_size < 1 or t.epochs < 0 or t.lr < 0:
        problems.append("need batch_size >= 1, epochs >= 0, lr >= 0")
    if cfg.folds == 1 or cfg.folds < 0:
        problems.append("folds must be 0 (no search) or at least 2")
    if problems:
        raise ConfigError(f"{source}: " + "; ".join(problems))


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def format_config(cfg: RunConfig) -> str:
    """Inverse of :func:`parse_config` (grid lines last)."""
    def fmt(v):
        if v is None:
            return "none"
        if isinstance(v, bool):
            return str(v).lower()
        return repr(v) if isinstance(v, float) else str(v)

    lines = [f"{f.name} = {fmt(getattr(cfg.hyper, f.name))}" for f in fields(ModelHyper) if f.name != "seed"]
    lines += [f"{f.name} = {fmt(getattr(cfg.train, f.name))}" for f in fields(TrainConfig)]
    lines.append(f"folds = {cfg.folds}")
    if cfg.M is not None:
        lines.append(f"M = {cfg.M}")
    lines += [f"grid.{k} = " + ", ".join(fmt(v) for v in vals) for k, vals in cfg.grid.items()]
    return "\n".join(lines) + "\n"


def _encode(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "data": [float(v) for v in arr.reshape(-1)]}


def _decode(obj: dict, name: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        data = np.array(obj["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"array {name!r} is malformed: {exc}") from None
    if data.size != int(np.prod(shape)):
        raise ModelFormatError(f"array {name!r}: {data.size} values for shape {shape}")
    return data.reshape(shape)


def model_to_dict(p) -> dict:
    hyper = {f.name: getattr(p.hyper, f.name) for f in fields(ModelHyper)}
    if isinstance(p, ModelParams):
        kind, n_points, names = "expsig", p.n_points, _EXPSIG_ARRAYS
    elif isinstance(p, ReadoutParams):
        kind, n_points, names = p.preprocess, 0, _READOUT_ARRAYS
    else:
        raise TypeError(f"cannot serialize {type(p).__name__}")
    arrays = p.arrays()
    return {"format": FORMAT_NAME, "version": FORMAT_VERSION, "kind": kind, "dim": int(p.dim),
            "n_points": int(n_points), "hyper": hyper,
            "arrays": {name: _encode(arrays[name]) for name in names}}


def model_from_dict(obj: dict):
    if obj.get("format") != FORMAT_NAME:
        raise ModelFormatError("not an expsig model file")
    if obj.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {obj.get('version')!r}")
    kind = obj.get("kind")
    known = {f.name for f in fields(ModelHyper)}
    raw_hyper = obj.get("hyper", {})
    unknown = set(raw_hyper) - known
    if unknown:
        raise ModelFormatError(f"unknown hyper fields {sorted(unknown)}")
    hyper = ModelHyper(**raw_hyper)
    names = _EXPSIG_ARRAYS if kind == "expsig" else _READOUT_ARRAYS
    if kind != "expsig" and kind not in PREPROCESSORS:
        raise ModelFormatError(f"unknown model kind {kind!r}")
    stored = obj.get("arrays", {})
    if list(stored) != list(names):
        raise ModelFormatError(f"expected arrays {list(names)}, found {list(stored)}")
    a = {name: _decode(stored[name], name) for name in names}
    dim = int(obj["dim"])
    if kind == "expsig":
        aug = AugmenterParams(a["W_m"], a["b_m"], a["W_V"], a["b_V"])
        return ModelParams(aug, a["readout_W"], a["readout_b"], hyper, int(obj["n_points"]), dim)
    return ReadoutParams(a["W"], a["b"], hyper, dim, kind)


def save_model(p, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(p), indent=1) + "\n")


def load_model(path):
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: invalid JSON ({exc})") from None
    return model_from_dict(obj)
