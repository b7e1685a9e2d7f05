"""Training procedures, optimizer, pruning and evaluation."""

from .config import IR_VARIANTS, PRESET_DISTILL, PRESET_SCHEDULES, VARIANTS, PruneSpec, TrainConfig, preset
from .loop import CSV_FIELDS, EpochRow, RunReport, TeacherCache, evaluate, fine_tune, hint_split, predict, train
from .optim import lr_at_epoch, milestone_lr, reset_momentum, sgd_step
from .prune import achieved_sparsity, magnitude_prune, prunable

__all__ = [
    "IR_VARIANTS", "PRESET_DISTILL", "PRESET_SCHEDULES", "VARIANTS", "PruneSpec", "TrainConfig",
    "preset", "CSV_FIELDS", "EpochRow", "RunReport", "TeacherCache", "evaluate", "fine_tune",
    "hint_split", "predict", "train", "lr_at_epoch", "milestone_lr", "reset_momentum", "sgd_step",
    "achieved_sparsity", "magnitude_prune", "prunable",
]
