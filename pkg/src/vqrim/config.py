"""Flat ``key = value`` experiment configuration with typed validation.

Example::

    # three planted clusters, full model
    method = vq-rim
    data = synthetic
    synthetic.n_clusters = 3
    synthetic.seed = 7
    seed = 0
    epochs = 200

Keys without a prefix are experiment options or :class:`TrainConfig` fields;
``synthetic.*`` keys set :class:`SyntheticSpec` fields. Every key is
optional. ``synthetic.seed`` defaults to ``seed``. Lists are comma
separated; ``none`` clears an optional value. Blank lines and text after
``#`` are ignored.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field

from .data import SyntheticSpec
from .errors import ConfigError, InputError
from .pipeline import TrainConfig

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


@dataclass
class ExperimentConfig:
    method: str = "vq-rim"
    data: str = "synthetic"  # "synthetic" or a CSV path
    survival: str | None = None
    labels_column: str | None = None
    zscore: bool = True
    n_clusters: int | None = None  # K for baseline clusterers; default: number of known labels
    plots: bool = True
    ablation: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: dict = field(default_factory=dict)

    def __post_init__(self):
        from .experiment import METHODS

        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.n_clusters is not None and self.n_clusters < 1:
            raise ConfigError("n_clusters must be positive")
        self.synthetic_spec()  # validates the synthetic fields early

    def synthetic_spec(self):
        values = {"seed": self.train.seed, **self.synthetic}
        try:
            return SyntheticSpec(**values)
        except (TypeError, InputError) as exc:
            raise ConfigError(f"invalid synthetic settings: {exc}") from exc

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
               if f.name not in ("train", "synthetic")}
        out["train"] = self.train.to_dict()
        if self.data == "synthetic":
            out["synthetic"] = dataclasses.asdict(self.synthetic_spec())
        return out


def _field_types(cls):
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _base_types(hint):
    args = typing.get_args(hint)
    return tuple(a for a in args if a is not type(None)) if args else (hint,)


def _convert(key, raw, hint):
    text = raw.strip()
    optional = type(None) in typing.get_args(hint)
    if text.lower() == "none":
        if optional:
            return None
        raise ConfigError(f"{key}: a value is required")
    errors = []
    for base in _base_types(hint):
        try:
            if base is bool:
                low = text.lower()
                if low in _TRUE:
                    return True
                if low in _FALSE:
                    return False
                raise ValueError(f"not a boolean: {text!r}")
            if base is int:
                return int(text)
            if base is float:
                return float(text)
            if base is str:
                return text
            if base is list or typing.get_origin(base) is list:
                return [float(v) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            errors.append(str(exc))
    raise ConfigError(f"{key}: cannot parse {text!r} ({'; '.join(errors) or 'unsupported type'})")


def parse_config(text):
    """Parse config text into an :class:`ExperimentConfig`."""
    exp_types = {k: v for k, v in _field_types(ExperimentConfig).items()
                 if k not in ("train", "synthetic")}
    train_types = _field_types(TrainConfig)
    synth_types = _field_types(SyntheticSpec)
    exp, train, synth = {}, {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("synthetic."):
            name = key[len("synthetic."):]
            if name not in synth_types:
                raise ConfigError(f"line {lineno}: unknown synthetic key {name!r}")
            hint = synth_types[name]
            if name == "samples_per_cluster" and "," not in value:
                hint = int
            target = synth
        elif key in exp_types:
            name, hint, target = key, exp_types[key], exp
        elif key in train_types:
            name, hint, target = key, train_types[key], train
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if name in target:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        target[name] = _convert(key, value, hint)
    if "samples_per_cluster" in synth and isinstance(synth["samples_per_cluster"], list):
        synth["samples_per_cluster"] = [int(v) for v in synth["samples_per_cluster"]]
    return ExperimentConfig(train=TrainConfig(**train), synthetic=synth, **exp)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(cfg):
    """Render ``cfg`` back to config text (round-trips through :func:`parse_config`)."""
    def fmt(v):
        if v is None:
            return "none"
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (list, tuple)):
            return ", ".join(repr(x) for x in v)
        return repr(v) if isinstance(v, float) else str(v)

    lines = []
    for f in dataclasses.fields(ExperimentConfig):
        if f.name not in ("train", "synthetic"):
            lines.append(f"{f.name} = {fmt(getattr(cfg, f.name))}")
    for k, v in cfg.train.to_dict().items():
        lines.append(f"{k} = {fmt(v)}")
    for k, v in cfg.synthetic.items():
        lines.append(f"synthetic.{k} = {fmt(v)}")
    return "\n".join(lines) + "\n"
