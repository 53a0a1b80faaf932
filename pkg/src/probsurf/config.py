"""Flat ``section.key = value`` experiment configuration with a strict schema."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

from .instances import REGISTRY_NAMES
from .network import ACTIVATIONS, OUTPUT_TRANSFORMS, TOPOLOGIES
from .trainer import ConfigError, TrainConfig


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _vector(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _optional_float(text):
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    return float(text)


def _choice(options):
    def parse(text):
        v = str(text).strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}; got {v!r}")
        return v

    return parse


def _positive(kind):
    def parse(text):
        v = kind(text)
        if not v > 0:
            raise ValueError("must be positive")
        return v

    return parse


def _nonneg(kind):
    def parse(text):
        v = kind(text)
        if not v >= 0:
            raise ValueError("must be non-negative")
        return v

    return parse


def _int(text):
    v = float(text)
    if not v.is_integer():
        raise ValueError(f"not an integer: {text!r}")
    return int(v)


def _finite(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


_TRAIN_DEFAULTS = TrainConfig()

# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "model.topology": (_choice(TOPOLOGIES), "block_diagonal"),
    "model.num_layers": (_positive(_int), 4),
    "model.num_blocks": (_positive(_int), 8),
    "model.block_size": (_positive(_int), 16),
    "model.width": (_positive(_int), 64),
    "model.activation": (_choice(ACTIVATIONS), "leaky_relu"),
    "model.leaky_slope": (_positive(float), 0.01),
    "model.shortcuts": (_bool, False),
    "model.output_transform": (_choice(OUTPUT_TRANSFORMS), "identity"),
    "model.h_min": (_finite, -1.0),
    "model.h_max": (_finite, 1.0),
    "model.zero_last_layer": (_bool, False),
    "model.precondition": (_bool, True),
    "instance.name": (_choice(REGISTRY_NAMES), "pso_lde"),
    "instance.alpha": (_optional_float, None),
    "instance.p": (_optional_float, None),
    "instance.a": (_optional_float, None),
    "instance.b": (_optional_float, None),
    "instance.m": (_optional_float, None),
    "instance.wrap_bounded": (_bool, False),
    "instance.cut_up_at": (_optional_float, None),
    "instance.cut_down_at": (_optional_float, None),
    "data.distribution": (_choice(("columns", "transformed_columns", "linear_gaussian_pairs", "dataset")), "columns"),
    "data.dim": (_positive(_int), 1),
    "data.dataset_size": (_positive(_int), 200000),
    "data.dataset_path": (str, ""),
    "data.slope": (_finite, 1.0),
    "data.offset": (_finite, 0.0),
    "data.noise_std": (_positive(float), 0.5),
    "down.kind": (_choice(("uniform_fit", "gaussian_fit", "explicit")), "uniform_fit"),
    "down.margin": (_nonneg(float), 0.01),
    "down.distribution": (_choice(("uniform", "gaussian")), "uniform"),
    "down.lo": (_vector, []),
    "down.hi": (_vector, []),
    "down.mean": (_vector, []),
    "down.std": (_vector, []),
    "train.iterations": (_nonneg(_int), _TRAIN_DEFAULTS.iterations),
    "train.batch_up": (_positive(_int), _TRAIN_DEFAULTS.batch_up),
    "train.batch_down": (_positive(_int), _TRAIN_DEFAULTS.batch_down),
    "train.lr0": (_positive(float), _TRAIN_DEFAULTS.lr0),
    "train.warm_iters": (_nonneg(_int), _TRAIN_DEFAULTS.warm_iters),
    "train.lr_min": (_positive(float), _TRAIN_DEFAULTS.lr_min),
    "train.adam_beta1": (float, _TRAIN_DEFAULTS.adam_beta1),
    "train.adam_beta2": (float, _TRAIN_DEFAULTS.adam_beta2),
    "train.adam_eps": (_positive(float), _TRAIN_DEFAULTS.adam_eps),
    "train.seed": (_nonneg(_int), 0),
    "train.augment_sigma": (_nonneg(float), 0.0),
    "train.checkpoint_period": (_nonneg(_int), 0),
    "train.grad_clip": (_nonneg(float), 0.0),
    "eval.test_size": (_positive(_int), 10000),
    "eval.eval_period": (_nonneg(_int), 0),
    "eval.integral_samples": (_positive(_int), 100000),
    "output.dir": (str, "run"),
    "output.csv": (str, "metrics.csv"),
    "output.checkpoints": (_bool, True),
    "output.record_wall_time": (_bool, False),
}

INSTANCE_PARAMS = ("alpha", "p", "a", "b", "m")


@dataclass
class ExperimentConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def section(self, name) -> dict:
        prefix = name + "."
        return {k[len(prefix) :]: v for k, v in self.values.items() if k.startswith(prefix)}

    def canonical_text(self) -> str:
        """Every key (defaults included) as sorted ``key = value`` lines."""
        lines = []
        for key in sorted(SCHEMA):
            v = self.values[key]
            if isinstance(v, list):
                v = ",".join(repr(float(x)) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif v is None:
                v = "none"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        """Digest of the canonical text, excluding output-only keys."""
        text = "\n".join(l for l in self.canonical_text().splitlines() if not l.startswith("output."))
        return hashlib.blake2b(text.encode(), digest_size=16).hexdigest()

    def with_overrides(self, **overrides) -> ExperimentConfig:
        raw = {k: v for k, v in self.values.items()}
        for k, v in overrides.items():
            if k not in SCHEMA:
                raise ConfigError(k, "unknown configuration key")
            raw[k] = v
        return build_config(raw)

    def train_config(self) -> TrainConfig:
        t = self.section("train")
        try:
            return TrainConfig(eval_period=self.values["eval.eval_period"], **t)
        except ConfigError as exc:
            key = "eval.eval_period" if exc.key == "eval_period" else f"train.{exc.key}"
            raise ConfigError(key, str(exc).split(": ", 1)[-1]) from None

    def instance_params(self) -> dict:
        return {p: self.values[f"instance.{p}"] for p in INSTANCE_PARAMS if self.values[f"instance.{p}"] is not None}


def parse_text(text: str) -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in raw:
            raise ConfigError(key, "duplicate key")
        raw[key] = value
    return raw


def build_config(raw: dict) -> ExperimentConfig:
    values = {}
    for key in raw:
        if key not in SCHEMA:
            raise ConfigError(key, "unknown configuration key")
    for key, (parser, default) in SCHEMA.items():
        if key in raw:
            try:
                values[key] = parser(raw[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, str(exc)) from None
        else:
            values[key] = default
    cfg = ExperimentConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    v = cfg.values
    alpha = v["instance.alpha"]
    if alpha is not None and not (math.isfinite(alpha) and alpha > 0):
        raise ConfigError("instance.alpha", f"must be positive and finite, got {alpha!r}")
    if v["instance.p"] is not None and not v["instance.p"] > 0:
        raise ConfigError("instance.p", "must be positive")
    if v["model.output_transform"] == "bounded" and not v["model.h_min"] < v["model.h_max"]:
        raise ConfigError("model.h_max", "must exceed model.h_min")
    if not 0 < v["model.leaky_slope"] < 1:
        raise ConfigError("model.leaky_slope", "must lie in (0, 1)")
    if v["data.distribution"] == "dataset" and not v["data.dataset_path"]:
        raise ConfigError("data.dataset_path", "required when data.distribution = dataset")
    if v["down.kind"] == "explicit":
        if v["down.distribution"] == "uniform" and (not v["down.lo"] or len(v["down.lo"]) != len(v["down.hi"])):
            raise ConfigError("down.lo", "explicit uniform down density needs down.lo and down.hi of equal length")
        if v["down.distribution"] == "gaussian" and (not v["down.mean"] or len(v["down.mean"]) != len(v["down.std"])):
            raise ConfigError("down.mean", "explicit gaussian down density needs down.mean and down.std of equal length")
    cfg.train_config()


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return build_config(parse_text(fh.read()))


def loads_config(text: str) -> ExperimentConfig:
    return build_config(parse_text(text))
