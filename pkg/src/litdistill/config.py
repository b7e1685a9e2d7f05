"""Experiment configuration files: flat ``section.key = value`` lines.

The grammar is documented in ``docs/config-format.md``. Parsing is strict:
unknown keys, duplicate keys and malformed values are rejected with the line
number and key in the message.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .autodiff import ConfigurationError
from .data import Splits, classification_splits, load_small_image_binary, split_dataset, translation_splits
from .losses import PENALTIES, DistillConfig, canonical_penalty
from .netgraph import NetworkSpec, generator_spec, resnet_spec
from .trainer import VARIANTS, PruneSpec, TrainConfig, preset


class ConfigError(ConfigurationError):
    """A configuration file or value is invalid; carries the line number when known."""

    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(key)
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.line = line
        self.key = key


# ------------------------------------------------------------------------------ value parsers

def _bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


def _list(item: Callable) -> Callable:
    def parse(s: str):
        s = s.strip()
        if not s:
            return ()
        return tuple(item(p.strip()) for p in s.split(","))
    return parse


def _choice(*options: str) -> Callable:
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s
    return parse


def _penalty(s: str) -> str:
    return canonical_penalty(s)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _spec_keys(role: str) -> Dict[str, Tuple[Callable, object]]:
    return {
        f"{role}.arch": (_choice("resnet", "generator"), "resnet"),
        f"{role}.blocks": (_list(int), (1, 1, 1)),
        f"{role}.channels": (_list(int), (16, 32, 64)),
        f"{role}.cardinality": (_list(int), (1,)),
        f"{role}.residual_blocks": (int, 2),
        f"{role}.widths": (_list(int), (8, 16, 32)),
    }


# key -> (parser, default); a default of None means "unset"
SCHEMA: Dict[str, Tuple[Callable, object]] = {
    "dataset.kind": (_choice("classification", "translation", "binary"), "classification"),
    "dataset.seed": (int, 0),
    "dataset.classes": (int, 10),
    "dataset.size": (int, 16),
    "dataset.train": (int, 5000),
    "dataset.val": (int, 500),
    "dataset.test": (int, 1000),
    "dataset.noise": (float, None),
    "dataset.path": (str, None),
    "dataset.limit": (int, None),
    **_spec_keys("student"),
    **_spec_keys("teacher"),
    "teacher.checkpoint": (str, None),
    "teacher.epochs": (int, None),
    "teacher.seed": (int, None),
    "teacher.lr0": (float, None),
    "train.variant": (_choice(*VARIANTS), "scratch"),
    "train.scale": (float, 0.1),
    "train.epochs": (int, None),
    "train.fine_tune_epochs": (int, None),
    "train.batch_size": (int, None),
    "train.lr0": (float, None),
    "train.milestones": (_list(int), None),
    "train.lr_decay": (float, None),
    "train.fine_tune_lr0": (float, None),
    "train.fine_tune_milestones": (_list(int), None),
    "train.momentum": (float, None),
    "train.weight_decay": (float, None),
    "train.seed": (int, 0),
    "train.freeze_copied": (_bool, None),
    "train.tau": (float, None),
    "train.alpha": (float, None),
    "train.beta": (float, None),
    "train.penalty": (_penalty, None),
    "train.scale_soft_by_tau_sq": (_bool, False),
    "prune.checkpoint": (str, None),
    "prune.sparsity": (float, 0.5),
    "prune.scope": (_choice("per-tensor", "global"), "per-tensor"),
    "prune.fine_tune_epochs": (int, 0),
    "eval.checkpoint": (str, None),
    "sweep.param": (_choice("tau", "alpha", "beta", "penalty", "sparsity"), None),
    "sweep.values": (_list(str), None),
    "sweep.seeds": (_list(int), (0, 1, 2)),
    "select.tau": (_list(float), (1.0, 2.0, 4.0, 6.0, 8.0)),
    "select.alpha": (_list(float), (0.0, 0.25, 0.5, 0.75, 0.9, 0.95, 1.0)),
    "select.beta": (_list(float), (0.0, 0.25, 0.5, 0.75, 1.0)),
    "select.tau_alpha": (float, 0.5),
    "select.tau_student_blocks": (_list(int), None),
    "output.dir": (str, None),
}

SWEEP_DEFAULTS = {
    "alpha": ("0", "0.25", "0.5", "0.75", "0.9", "0.95", "1.0"),
    "beta": ("0", "0.25", "0.5", "0.75", "1"),
    "tau": ("1", "2", "4", "6", "8"),
    "penalty": PENALTIES,
    "sparsity": ("0", "0.25", "0.5", "0.75", "0.9"),
}


@dataclass
class ExperimentConfig:
    """Parsed configuration: explicit values plus schema defaults."""

    values: Dict[str, object] = field(default_factory=dict)
    lines: Dict[str, int] = field(default_factory=dict)
    base_dir: str = "."

    def __getitem__(self, key: str):
        if key in self.values:
            return self.values[key]
        return SCHEMA[key][1]

    def is_set(self, key: str) -> bool:
        return key in self.values

    def override(self, changes: Dict[str, object]) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in changes.items():
            if k not in SCHEMA:
                raise ConfigError("unknown key", key=k)
            vals[k] = v
        return ExperimentConfig(vals, dict(self.lines), self.base_dir)

    def error(self, key: str, message: str) -> ConfigError:
        return ConfigError(message, self.lines.get(key), key)

    def path(self, key: str) -> Optional[str]:
        v = self[key]
        if v is None:
            return None
        return v if os.path.isabs(v) else os.path.normpath(os.path.join(self.base_dir, v))

    # ------------------------------------------------------------------ builders

    def splits(self) -> Splits:
        kind = self["dataset.kind"]
        seed = self["dataset.seed"]
        try:
            if kind == "classification":
                extra = {} if self["dataset.noise"] is None else {"noise": self["dataset.noise"]}
                return classification_splits(seed, self["dataset.classes"], self["dataset.size"],
                                             self["dataset.train"], self["dataset.val"],
                                             self["dataset.test"], **extra)
            if kind == "translation":
                return translation_splits(seed, self["dataset.size"], self["dataset.train"],
                                          self["dataset.val"], self["dataset.test"])
        except ValueError as exc:
            raise self.error("dataset.kind", str(exc)) from None
        path = self.path("dataset.path")
        if path is None:
            raise self.error("dataset.path", "binary datasets need dataset.path")
        ds = load_small_image_binary(path, self["dataset.limit"])
        n = len(ds)
        tr, va, te = split_dataset(ds, self["dataset.val"] / max(n, 1), self["dataset.test"] / max(n, 1), seed)
        return Splits(tr, va, te)

    def input_shape(self) -> Tuple[int, int, int]:
        if self["dataset.kind"] == "binary":
            return (3, 32, 32)
        s = self["dataset.size"]
        return (3, s, s)

    def class_count(self) -> Optional[int]:
        kind = self["dataset.kind"]
        if kind == "translation":
            return None
        return 10 if kind == "binary" else self["dataset.classes"]

    def network_spec(self, role: str, blocks: Optional[Sequence[int]] = None) -> NetworkSpec:
        try:
            if self[f"{role}.arch"] == "generator":
                if self.class_count() is not None:
                    raise self.error(f"{role}.arch", "generator networks need dataset.kind = translation")
                return generator_spec(self[f"{role}.residual_blocks"], self[f"{role}.widths"],
                                      self.input_shape())
            if self.class_count() is None:
                raise self.error(f"{role}.arch", "translation datasets need arch = generator")
            card = self[f"{role}.cardinality"]
            channels = self[f"{role}.channels"]
            blocks = tuple(blocks or self[f"{role}.blocks"])
            if len(card) == 1:
                card = card[0]
            return resnet_spec(blocks, channels, card, self.input_shape(), self.class_count())
        except ConfigError:
            raise
        except ConfigurationError as exc:
            raise self.error(f"{role}.blocks", str(exc)) from None

    def distill(self) -> DistillConfig:
        base = preset(self["train.variant"], self["train.scale"]).distill
        kw = {}
        for name in ("tau", "alpha", "beta", "penalty"):
            if self[f"train.{name}"] is not None:
                kw[name] = self[f"train.{name}"]
        kw["scale_soft_by_tau_sq"] = self["train.scale_soft_by_tau_sq"]
        try:
            return DistillConfig(**{**base.__dict__, **kw})
        except ConfigurationError as exc:
            raise self.error(_first_set(self, [f"train.{n}" for n in kw]), str(exc)) from None

    def train_config(self, variant: Optional[str] = None) -> TrainConfig:
        variant = variant or self["train.variant"]
        overrides = {}
        for name in ("epochs", "fine_tune_epochs", "batch_size", "lr0", "milestones", "lr_decay",
                     "fine_tune_lr0", "fine_tune_milestones", "momentum", "weight_decay",
                     "freeze_copied"):
            v = self[f"train.{name}"]
            if v is not None:
                overrides[name] = v
        overrides["seed"] = self["train.seed"]
        overrides["distill"] = self.distill()
        if self["train.scale"] <= 0:
            raise self.error("train.scale", "must be positive")
        # an explicit epoch count keeps the preset milestones at the same fractions
        base = preset(variant, self["train.scale"])
        if "epochs" in overrides and "milestones" not in overrides:
            overrides["milestones"] = _rescale(base.milestones, base.epochs, overrides["epochs"])
        if "fine_tune_epochs" in overrides and "fine_tune_milestones" not in overrides:
            overrides["fine_tune_milestones"] = _rescale(
                base.fine_tune_milestones, base.fine_tune_epochs, overrides["fine_tune_epochs"])
        if self.class_count() is None and variant != "scratch":
            overrides.setdefault("fine_tune_epochs", 0)
            overrides.setdefault("fine_tune_milestones", ())
        try:
            return preset(variant, self["train.scale"], **overrides)
        except ConfigurationError as exc:
            raise self.error(_first_set(self, [f"train.{k}" for k in overrides]), str(exc)) from None

    def teacher_train_config(self) -> TrainConfig:
        cfg = self.train_config("scratch")
        epochs = self["teacher.epochs"]
        if epochs is not None:
            cfg = cfg.with_(epochs=epochs, milestones=_rescale(cfg.milestones, cfg.epochs, epochs))
        if self["teacher.lr0"] is not None:
            cfg = cfg.with_(lr0=self["teacher.lr0"])
        seed = self["teacher.seed"]
        return cfg.with_(seed=cfg.seed if seed is None else seed, fine_tune_epochs=0,
                         fine_tune_milestones=())

    def prune_spec(self) -> PruneSpec:
        try:
            return PruneSpec(self["prune.sparsity"], self["prune.scope"], self["prune.fine_tune_epochs"])
        except ConfigurationError as exc:
            raise self.error("prune.sparsity", str(exc)) from None

    # ------------------------------------------------------------------ echo

    def resolved_text(self) -> str:
        """Canonical ``key = value`` text of every explicitly set key, sorted."""
        out = []
        for key in sorted(self.values):
            out.append(f"{key} = {_fmt(self.values[key])}")
        return "\n".join(out) + "\n"


def _first_set(cfg: ExperimentConfig, keys: List[str]) -> Optional[str]:
    for k in keys:
        if cfg.is_set(k):
            return k
    return None


def _rescale(milestones: Sequence[int], old: int, new: int) -> Tuple[int, ...]:
    """Move milestones to the same fractions of a new epoch count."""
    out: List[int] = []
    for m in milestones:
        v = m * new // old if old else 0
        if 0 < v < new and (not out or v > out[-1]):
            out.append(v)
    return tuple(out)


# ------------------------------------------------------------------------------ parsing

def parse_config(text: str, base_dir: str = ".") -> ExperimentConfig:
    values: Dict[str, object] = {}
    lines: Dict[str, int] = {}
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", number)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError("unknown key", number, key)
        if key in values:
            raise ConfigError(f"duplicate key (first set on line {lines[key]})", number, key)
        try:
            values[key] = SCHEMA[key][0](value)
        except (ValueError, ConfigurationError) as exc:
            raise ConfigError(f"bad value {value!r}: {exc}", number, key) from None
        lines[key] = number
    return ExperimentConfig(values, lines, base_dir)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, os.path.dirname(os.path.abspath(path)))
