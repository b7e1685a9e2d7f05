"""Training configuration and the schedule presets."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Tuple

from ..autodiff import ConfigurationError
from ..losses import DistillConfig

VARIANTS = ("scratch", "kd", "lit", "hint_single_no_input", "hint_single_with_input",
            "multi_ir_no_input")
IR_VARIANTS = ("lit", "hint_single_no_input", "hint_single_with_input", "multi_ir_no_input")


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "scratch"
    epochs: int = 20
    fine_tune_epochs: int = 0
    batch_size: int = 32
    lr0: float = 0.1
    milestones: Tuple[int, ...] = (10, 15)
    # learning rate is divided by lr_decay at each milestone
    lr_decay: float = 10.0
    fine_tune_lr0: float = 0.01
    fine_tune_milestones: Tuple[int, ...] = ()
    momentum: float = 0.9
    weight_decay: float = 1e-4
    distill: DistillConfig = field(default_factory=DistillConfig)
    seed: int = 0
    # keep layers copied from the teacher fixed (generator compression)
    freeze_copied: bool = False

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        object.__setattr__(self, "fine_tune_milestones",
                           tuple(int(m) for m in self.fine_tune_milestones))
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.epochs < 0 or self.fine_tune_epochs < 0:
            raise ConfigurationError("epoch counts must be non-negative")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2 (batch normalization)")
        for name, ms, limit in (("milestones", self.milestones, self.epochs),
                                ("fine_tune_milestones", self.fine_tune_milestones,
                                 self.fine_tune_epochs)):
            if any(b <= a for a, b in zip(ms, ms[1:])):
                raise ConfigurationError(f"{name} must be strictly increasing, got {ms}")
            if ms and (ms[0] < 0 or ms[-1] >= limit):
                raise ConfigurationError(f"{name} must lie in [0, {limit}), got {ms}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")
        if self.lr0 <= 0 or self.fine_tune_lr0 <= 0 or self.lr_decay <= 0:
            raise ConfigurationError("learning rates and lr_decay must be positive")

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class PruneSpec:
    sparsity: float
    scope: str = "per-tensor"
    fine_tune_epochs: int = 0

    def __post_init__(self):
        if not 0.0 <= self.sparsity < 1.0:
            raise ConfigurationError(f"sparsity must lie in [0, 1), got {self.sparsity}")
        if self.scope not in ("per-tensor", "global"):
            raise ConfigurationError(f"scope must be 'per-tensor' or 'global', got {self.scope!r}")
        if self.fine_tune_epochs < 0:
            raise ConfigurationError("fine_tune_epochs must be >= 0")


# Full-length residual-network schedules:
# (epochs, lr0, milestones, fine-tune epochs, fine-tune lr0, fine-tune milestones)
PRESET_SCHEDULES = {
    "scratch": (200, 0.1, (100, 150), 0, 0.01, ()),
    "kd": (250, 0.1, (100, 175), 0, 0.01, ()),
    "lit": (175, 0.1, (60, 100, 125), 75, 0.01, (35, 55)),
}
PRESET_DISTILL = DistillConfig(tau=6.0, alpha=0.95, beta=0.75, penalty="L2")


def _scaled(ms, factor, limit):
    out = []
    for m in ms:
        v = int(round(m * factor))
        if 0 < v < limit and (not out or v > out[-1]):
            out.append(v)
    return tuple(out)


def preset(variant: str, scale: float = 0.1, **overrides) -> TrainConfig:
    """The published schedule shape for ``variant`` scaled by ``scale``.

    ``scale=1`` reproduces the full-length schedules; the ablation variants use
    the LIT schedule.
    """
    key = variant if variant in PRESET_SCHEDULES else "lit"
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}")
    epochs, lr0, ms, ft, ft_lr0, ft_ms = PRESET_SCHEDULES[key]
    e = max(1, int(round(epochs * scale)))
    f = int(round(ft * scale))
    kwargs = dict(variant=variant, epochs=e, lr0=lr0, milestones=_scaled(ms, scale, e),
                  fine_tune_epochs=f, fine_tune_lr0=ft_lr0,
                  fine_tune_milestones=_scaled(ft_ms, scale, f), batch_size=32, momentum=0.9,
                  weight_decay=1e-4, distill=PRESET_DISTILL)
    kwargs.update(overrides)
    return TrainConfig(**kwargs)
