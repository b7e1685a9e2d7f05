"""Distillation losses: softened distributions, KD, intermediate-representation and LIT losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import ConfigurationError, DimensionError, Tensor, detach, ops
from .netgraph import SegmentedNetwork, forward_collect, validate_pairing

PENALTIES = ("L2", "L1", "SmoothedL1")
_PENALTY_ALIASES = {"l2": "L2", "l1": "L1", "smoothedl1": "SmoothedL1", "smoothed_l1": "SmoothedL1",
                    "huber": "SmoothedL1"}


class DataError(ValueError):
    """Labels or targets are inconsistent with the model output."""


def canonical_penalty(name: str) -> str:
    try:
        return _PENALTY_ALIASES[name.lower()]
    except KeyError:
        raise ConfigurationError(f"unknown IR penalty {name!r}; expected one of {PENALTIES}") from None


@dataclass(frozen=True)
class DistillConfig:
    tau: float = 6.0
    alpha: float = 0.95
    beta: float = 0.75
    penalty: str = "L2"
    # classical tau^2 rescaling of the soft term; off to keep the KD loss literal
    scale_soft_by_tau_sq: bool = False

    def __post_init__(self):
        object.__setattr__(self, "penalty", canonical_penalty(self.penalty))
        if not self.tau > 0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {v}")


def softened_distribution(z: Tensor, tau: float) -> Tensor:
    """exp(z_i / tau) / sum_j exp(z_j / tau), row-wise."""
    return ops.softmax_temperature(z, tau)


def _one_hot(labels: np.ndarray, classes: int, dtype) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DataError(f"labels must be 1-d, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise DataError(f"label out of range [0, {classes}): min {labels.min()}, max {labels.max()}")
    out = np.zeros((labels.size, classes), dtype=dtype)
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    if logits.ndim != 2 or logits.shape[0] != len(labels):
        raise DimensionError(f"logits {logits.shape} do not match {len(labels)} labels")
    onehot = Tensor(_one_hot(labels, logits.shape[1], logits.data.dtype), dtype=logits.data.dtype)
    logp = ops.log_softmax_temperature(logits, 1.0)
    return -ops.sum(ops.mul(onehot, logp)) * (1.0 / logits.shape[0])


def soft_cross_entropy(student_logits: Tensor, teacher_logits: Tensor, tau: float) -> Tensor:
    """-mean_n sum_i q_i log p_i with q, p the teacher and student distributions at ``tau``."""
    q = softened_distribution(detach(teacher_logits), tau).data
    logp = ops.log_softmax_temperature(student_logits, tau)
    return -ops.sum(ops.mul(Tensor(q, dtype=q.dtype), logp)) * (1.0 / student_logits.shape[0])


def kd_loss(student_logits: Tensor, teacher_logits: Tensor, labels: np.ndarray,
            alpha: float, tau: float, scale_soft_by_tau_sq: bool = False) -> Tensor:
    """alpha * CE(y, p) + (1 - alpha) * CE(q_tau, p_tau); gradients reach the student only.

    Zero-weighted terms are skipped, so alpha = 1 is exactly the hard-label
    cross-entropy for every tau.
    """
    if student_logits.shape != teacher_logits.shape:
        raise DimensionError(
            f"student logits {student_logits.shape} != teacher logits {teacher_logits.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError(f"alpha must lie in [0, 1], got {alpha}")
    if not tau > 0:
        raise ConfigurationError(f"tau must be positive, got {tau}")
    if labels is not None:
        _one_hot(labels, student_logits.shape[1], np.float32)
    terms = []
    if alpha > 0:
        if labels is None:
            raise DataError("kd_loss with alpha > 0 needs labels")
        terms.append(cross_entropy(student_logits, labels) * alpha)
    if alpha < 1:
        weight = (1.0 - alpha) * (tau * tau if scale_soft_by_tau_sq else 1.0)
        terms.append(soft_cross_entropy(student_logits, teacher_logits, tau) * weight)
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def ir_penalty(a: Tensor, b: Tensor, penalty: str = "L2") -> Tensor:
    """Element-mean of (a-b)^2, |a-b| or huber_unit(a-b)."""
    if a.shape != b.shape:
        raise DimensionError(f"IR penalty needs identical shapes, got {a.shape} and {b.shape}")
    kind = canonical_penalty(penalty)
    d = ops.sub(a, b)
    if kind == "L2":
        e = ops.square(d)
    elif kind == "L1":
        e = ops.abs(d)
    else:
        e = ops.huber_unit(d)
    return ops.mean(e)


@dataclass
class TeacherOutputs:
    """Detached eval-mode teacher outputs for one batch."""

    output: Tensor
    irs: List[Tensor]


def teacher_outputs(teacher: SegmentedNetwork, x: Tensor) -> TeacherOutputs:
    out, irs = forward_collect(teacher, detach(x), "eval")
    return TeacherOutputs(detach(out), [detach(t) for t in irs])


def ir_terms(teacher: SegmentedNetwork, student: SegmentedNetwork, x: Tensor, penalty: str = "L2",
             student_mode: str = "eval", teacher_out: Optional[TeacherOutputs] = None,
             student_first_ir: Optional[Tensor] = None) -> List[Tensor]:
    """The k per-split penalty terms: l(S_1(x), T_1) then l(S_i(T_{i-1}), T_i)."""
    validate_pairing(teacher.spec, student.spec)
    t = teacher_out or teacher_outputs(teacher, x)
    if student_first_ir is None:
        student_first_ir = student.run_section(1, student.run_stem(x, student_mode), student_mode)
    terms = [ir_penalty(student_first_ir, t.irs[0], penalty)]
    for i in range(2, student.k + 1):
        s_i = student.run_section(i, t.irs[i - 2], student_mode)
        terms.append(ir_penalty(s_i, t.irs[i - 1], penalty))
    return terms


def _total(terms: Sequence[Tensor]) -> Tensor:
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def ir_loss(teacher: SegmentedNetwork, student: SegmentedNetwork, x: Tensor, penalty: str = "L2",
            student_mode: str = "eval", teacher_out: Optional[TeacherOutputs] = None) -> Tensor:
    """Sum of per-split penalties where every student section after the first reads the teacher IR."""
    return _total(ir_terms(teacher, student, x, penalty, student_mode, teacher_out))


def lit_loss(teacher: SegmentedNetwork, student: SegmentedNetwork, x: Tensor,
             labels: Optional[np.ndarray], config: DistillConfig, student_mode: str = "eval",
             teacher_out: Optional[TeacherOutputs] = None) -> Tensor:
    """beta * KD(T, S) + (1 - beta) * IR(T, S).

    The KD term uses the full student forward S(x), whose first IR is reused for
    the first IR term. beta = 0 never runs the student head.
    """
    beta = config.beta
    if beta > 0 and student.spec.class_count is None:
        raise ConfigurationError("beta > 0 needs a classifier head; use beta = 0 for generators")
    if beta > 0 and config.alpha > 0 and labels is None:
        raise ConfigurationError("beta > 0 with alpha > 0 needs labels")
    validate_pairing(teacher.spec, student.spec)
    t = teacher_out or teacher_outputs(teacher, x)
    if beta == 0:
        return ir_loss(teacher, student, x, config.penalty, student_mode, t)
    s_out, s_irs = forward_collect(student, x, student_mode)
    kd = kd_loss(s_out, t.output, labels, config.alpha, config.tau, config.scale_soft_by_tau_sq)
    if beta == 1:
        return kd
    ir = _total(ir_terms(teacher, student, x, config.penalty, student_mode, t,
                         student_first_ir=s_irs[0]))
    return kd * beta + ir * (1.0 - beta)
