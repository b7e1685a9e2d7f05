"""Teacher/student split validation and verbatim layer copying."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .network import SegmentedNetwork, _in_layer
from .spec import NetworkSpec


class PairingError(ValueError):
    """Teacher and student disagree at a split point."""


class CopyError(ValueError):
    """A layer named for copying is missing or differs in shape."""


@dataclass(frozen=True)
class SplitSpec:
    """The k split points shared by a teacher and a student.

    ``copy_list`` names layers (dotted prefixes such as ``stem`` or ``head``)
    copied verbatim from teacher to student before training.
    """

    k: int
    ir_shapes: Tuple[Tuple[int, int, int], ...]
    copy_list: Tuple[str, ...] = field(default_factory=tuple)


PairingPlan = SplitSpec


def validate_pairing(teacher_spec: NetworkSpec, student_spec: NetworkSpec) -> SplitSpec:
    """Check that every split has the same IR shape in both networks.

    Block counts and cardinality may differ. The default copy list holds the
    stem and head whenever they are structurally identical.
    """
    teacher_spec.validate()
    student_spec.validate()
    if teacher_spec.input_shape != student_spec.input_shape:
        raise PairingError(
            f"input shapes differ: teacher {teacher_spec.input_shape}, "
            f"student {student_spec.input_shape}")
    t_shapes, s_shapes = teacher_spec.ir_shapes(), student_spec.ir_shapes()
    for i in range(min(len(t_shapes), len(s_shapes))):
        if t_shapes[i] != s_shapes[i]:
            raise PairingError(
                f"split {i + 1}: teacher IR shape {t_shapes[i]} != student IR shape {s_shapes[i]}")
    if len(t_shapes) != len(s_shapes):
        raise PairingError(
            f"split {min(len(t_shapes), len(s_shapes)) + 1}: teacher has {len(t_shapes)} "
            f"sections, student has {len(s_shapes)}")
    copy_list = []
    if teacher_spec.stem == student_spec.stem:
        copy_list.append("stem")
    if (teacher_spec.class_count == student_spec.class_count
            and teacher_spec.decoder == student_spec.decoder):
        copy_list.append("head")
    return SplitSpec(k=len(t_shapes), ir_shapes=tuple(t_shapes), copy_list=tuple(copy_list))


def full_copy_plan(plan: SplitSpec) -> SplitSpec:
    """The same split with every segment in the copy list."""
    layers = ["stem"] + [f"section{i}" for i in range(1, plan.k + 1)] + ["head"]
    return SplitSpec(plan.k, plan.ir_shapes, tuple(layers))


def _layer_entries(net: SegmentedNetwork, layer: str):
    return {n: a for n, a in net.state().items() if _in_layer(n, layer)}


def copy_layers(teacher: SegmentedNetwork, student: SegmentedNetwork, plan: SplitSpec) -> None:
    """Overwrite the student's copy-listed layers (parameters and buffers) with the teacher's.

    Everything is validated before anything is written. Copied parameters stay
    trainable.
    """
    pending: List[Tuple[np.ndarray, np.ndarray]] = []
    for layer in plan.copy_list:
        t_entries = _layer_entries(teacher, layer)
        s_entries = _layer_entries(student, layer)
        if not t_entries:
            raise CopyError(f"teacher has no layer named {layer!r}")
        if set(t_entries) != set(s_entries):
            missing = sorted(set(t_entries) ^ set(s_entries))
            raise CopyError(f"layer {layer!r} differs between networks: {missing[:3]}")
        for name, src in t_entries.items():
            dst = s_entries[name]
            if src.shape != dst.shape:
                raise CopyError(f"{name}: teacher shape {src.shape} != student shape {dst.shape}")
            pending.append((dst, src))
    for dst, src in pending:
        dst[...] = src
