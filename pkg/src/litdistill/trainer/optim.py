"""SGD with momentum and weight decay, and milestone learning-rate schedules."""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np

from ..autodiff import Parameter


def milestone_lr(lr0: float, milestones: Sequence[int], decay: float, epoch: int) -> float:
    """``lr0 / decay**m`` where m counts the milestones at or before ``epoch``."""
    passed = sum(1 for m in milestones if m <= epoch)
    return lr0 / decay ** passed


def lr_at_epoch(config, epoch: int, phase: str = "main") -> float:
    if phase == "fine_tune":
        return milestone_lr(config.fine_tune_lr0, config.fine_tune_milestones, config.lr_decay, epoch)
    return milestone_lr(config.lr0, config.milestones, config.lr_decay, epoch)


def sgd_step(params: Iterable[Parameter], grads: Mapping[str, np.ndarray], lr: float,
             momentum: float, weight_decay: float) -> None:
    """buffer <- momentum*buffer + grad + wd*value; value <- value - lr*buffer; then re-mask."""
    for p in params:
        try:
            g = grads[p.name]
        except KeyError:
            raise RuntimeError(f"no gradient for parameter {p.name}") from None
        buf = p.momentum_buffer
        buf *= momentum
        buf += g
        if weight_decay:
            buf += weight_decay * p.data
        p.data -= lr * buf
        p.apply_mask()


def reset_momentum(params: Iterable[Parameter]) -> None:
    for p in params:
        p.momentum_buffer[...] = 0.0
