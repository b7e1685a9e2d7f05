"""Training procedures: scratch, KD, LIT and the block-wise ablations."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..autodiff import ConfigurationError, Parameter, Tensor, UsageError, backward, no_grad, ops
from ..data import Dataset, Splits
from ..losses import (
    TeacherOutputs,
    cross_entropy,
    ir_penalty,
    kd_loss,
    lit_loss,
)
from ..netgraph import (
    NetworkSpec,
    PairingError,
    SegmentedNetwork,
    SplitSpec,
    build_network,
    copy_layers,
    forward_collect,
    validate_pairing,
)
from ..netgraph.network import _in_layer
from .config import IR_VARIANTS, TrainConfig
from .optim import lr_at_epoch, reset_momentum, sgd_step

log = logging.getLogger(__name__)

CSV_FIELDS = ("epoch", "phase", "lr", "train_loss", "val_acc")


@dataclass
class EpochRow:
    epoch: int
    phase: str
    lr: float
    train_loss: float
    val_acc: float


@dataclass
class RunReport:
    """Per-epoch metrics plus final figures.

    For generator tasks ``val_acc`` and ``final_test`` hold the mean per-pixel
    absolute error instead of an accuracy.
    """

    rows: List[EpochRow] = field(default_factory=list)
    final_test: float = float("nan")
    final_val: float = float("nan")
    wall_seconds: float = 0.0
    metric: str = "accuracy"
    config: dict = field(default_factory=dict)
    notes: Dict[str, str] = field(default_factory=dict)

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for r in self.rows:
            writer.writerow([r.epoch, r.phase, repr(float(r.lr)), repr(float(r.train_loss)),
                             repr(float(r.val_acc))])
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.csv_text())


# ------------------------------------------------------------------------------ evaluation

def predict(net: SegmentedNetwork, inputs: np.ndarray, batch_size: int = 250) -> np.ndarray:
    outs = []
    with no_grad():
        for start in range(0, len(inputs), batch_size):
            outs.append(net(Tensor(inputs[start:start + batch_size], dtype=net.dtype), "eval").data)
    return np.concatenate(outs)


def evaluate(net: SegmentedNetwork, dataset: Dataset, batch_size: int = 250) -> float:
    """Accuracy for classifiers, mean absolute per-pixel error for generators (eval mode)."""
    if len(dataset) == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    out = predict(net, dataset.inputs, batch_size)
    if net.spec.class_count is not None:
        return float(np.mean(out.argmax(axis=1) == dataset.targets))
    return float(np.mean(np.abs(out.astype(np.float64) - dataset.targets)))


# ------------------------------------------------------------------------------ teacher cache

class TeacherCache:
    """Eval-mode teacher outputs (and optionally IRs) for every training sample.

    The teacher is frozen and evaluated without stochastic layers, so these are
    exactly the per-batch teacher outputs, computed once.
    """

    def __init__(self, teacher: SegmentedNetwork, dataset: Dataset, with_irs: bool,
                 chunk: int = 250):
        outs, irs = [], [[] for _ in range(teacher.k)]
        with no_grad():
            for start in range(0, len(dataset), chunk):
                x = Tensor(dataset.inputs[start:start + chunk], dtype=teacher.dtype)
                out, ir = forward_collect(teacher, x, "eval")
                outs.append(out.data)
                if with_irs:
                    for i, t in enumerate(ir):
                        irs[i].append(t.data)
        self.output = np.concatenate(outs)
        self.irs = [np.concatenate(a) for a in irs] if with_irs else []

    def batch(self, index: np.ndarray) -> TeacherOutputs:
        return TeacherOutputs(Tensor(self.output[index], dtype=self.output.dtype),
                              [Tensor(a[index], dtype=a.dtype) for a in self.irs])


# ------------------------------------------------------------------------------ pairing helpers

def hint_split(k: int) -> int:
    """1-based index of the mid-network split used by single-hint training."""
    return (k + 1) // 2


def _hint_plan(teacher_spec: NetworkSpec, student_spec: NetworkSpec, variant: str) -> SplitSpec:
    """Looser pairing for single-hint variants: widths may differ, adapters bridge them."""
    try:
        return validate_pairing(teacher_spec, student_spec)
    except PairingError:
        pass
    t_shapes, s_shapes = teacher_spec.ir_shapes(), student_spec.ir_shapes()
    if len(t_shapes) != len(s_shapes):
        raise PairingError(f"teacher has {len(t_shapes)} sections, student has {len(s_shapes)}")
    h = hint_split(len(t_shapes))
    needed = [h] if variant == "hint_single_no_input" else [h - 1, h]
    for i in needed:
        if i >= 1 and t_shapes[i - 1][1:] != s_shapes[i - 1][1:]:
            raise PairingError(f"split {i}: spatial extents differ, "
                               f"{t_shapes[i - 1]} vs {s_shapes[i - 1]}")
    copy_list = [name for name, same in (("stem", teacher_spec.stem == student_spec.stem),
                                         ("head", teacher_spec.class_count == student_spec.class_count
                                          and teacher_spec.decoder == student_spec.decoder
                                          and t_shapes[-1][0] == s_shapes[-1][0])) if same]
    return SplitSpec(len(t_shapes), tuple(t_shapes), tuple(copy_list))


def _adapter(name: str, c_out: int, c_in: int, seed: int, dtype) -> Parameter:
    rng = np.random.default_rng([seed, 4242, c_out, c_in])
    return Parameter(rng.normal(0, np.sqrt(1.0 / c_in), size=(c_out, c_in, 1, 1)), name, dtype=dtype)


# ------------------------------------------------------------------------------ phases

def _batches(n: int, batch_size: int, seed: int, epoch: int):
    order = np.random.default_rng([seed, epoch]).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if len(idx) >= 2:
            yield idx


def _run_phase(phase: str, epochs: int, first_epoch: int, config: TrainConfig,
               net: SegmentedNetwork, params: Sequence[Parameter], data: Splits,
               loss_fn: Callable, report: RunReport) -> None:
    reset_momentum(params)
    train = data.train
    for e in range(epochs):
        lr = lr_at_epoch(config, e, phase)
        total, count = 0.0, 0
        for idx in _batches(len(train), config.batch_size, config.seed, first_epoch + e):
            x = Tensor(train.inputs[idx], dtype=net.dtype)
            loss = loss_fn(x, train.targets[idx], idx)
            for p in params:
                p.grad = None
            grads = backward(loss, params)
            sgd_step(params, grads, lr, config.momentum, config.weight_decay)
            total += float(loss.data) * len(idx)
            count += len(idx)
        val = evaluate(net, data.val) if len(data.val) else float("nan")
        row = EpochRow(first_epoch + e, phase, lr, total / max(count, 1), val)
        report.rows.append(row)
        log.info("epoch %d %s lr=%.4g loss=%.4f val=%.4f", row.epoch, phase, lr, row.train_loss, val)


def _kd_fn(student, cache, config):
    d = config.distill

    def fn(x, y, idx):
        out = student(x, "train")
        return kd_loss(out, cache.batch(idx).output, y, d.alpha, d.tau, d.scale_soft_by_tau_sq)
    return fn


def _task_loss(student, penalty):
    if student.spec.class_count is not None:
        return lambda x, y, idx: cross_entropy(student(x, "train"), y)
    return lambda x, y, idx: ir_penalty(student(x, "train"), Tensor(y, dtype=x.data.dtype), penalty)


def _mix(kd: Optional[Tensor], ir: Tensor, beta: float) -> Tensor:
    if kd is None or beta == 0:
        return ir
    if beta == 1:
        return kd
    return kd * beta + ir * (1.0 - beta)


def _ir_variant_fn(variant, teacher, student, cache, config, adapters):
    d = config.distill
    classifier = student.spec.class_count is not None
    h = hint_split(student.k)

    def kd_term(s_out, t, y):
        if not classifier or d.beta == 0:
            return None
        return kd_loss(s_out, t.output, y, d.alpha, d.tau, d.scale_soft_by_tau_sq)

    def fn(x, y, idx):
        t = cache.batch(idx)
        if variant == "lit":
            return lit_loss(teacher, student, x, y if classifier else None, d, "train", t)
        if variant == "multi_ir_no_input":
            s_out, s_irs = forward_collect(student, x, "train")
            ir = ir_penalty(s_irs[0], t.irs[0], d.penalty)
            for i in range(1, student.k):
                ir = ir + ir_penalty(s_irs[i], t.irs[i], d.penalty)
            return _mix(kd_term(s_out, t, y), ir, d.beta)
        if variant == "hint_single_no_input":
            s_out, s_irs = forward_collect(student, x, "train")
            s_h = s_irs[h - 1]
        else:  # hint_single_with_input
            s_out = student(x, "train")
            if h == 1:
                s_h = student.run_section(1, student.run_stem(x, "train"), "train")
            else:
                inp = t.irs[h - 2]
                if "in" in adapters:
                    inp = ops.conv2d(inp, adapters["in"])
                s_h = student.run_section(h, inp, "train")
        if "out" in adapters:
            s_h = ops.conv2d(s_h, adapters["out"])
        return _mix(kd_term(s_out, t, y), ir_penalty(s_h, t.irs[h - 1], d.penalty), d.beta)

    return fn


# ------------------------------------------------------------------------------ entry point

def train(variant: str, teacher: Optional[SegmentedNetwork], student_spec: NetworkSpec,
          data: Splits, config: TrainConfig) -> tuple:
    """Train a student of ``student_spec`` with procedure ``variant``.

    Returns ``(student, report)``. IR-based variants copy the teacher's
    structurally identical stem/head into the student first, run the
    distillation phase for ``config.epochs`` and then fine-tune with the KD
    loss for ``config.fine_tune_epochs``. The teacher is never modified.
    """
    if variant != config.variant:
        config = config.with_(variant=variant)
    started = time.perf_counter()
    if variant != "scratch" and teacher is None:
        raise ConfigurationError(f"variant {variant!r} needs a teacher")
    classifier = student_spec.class_count is not None
    if variant == "kd" and not classifier:
        raise ConfigurationError("KD needs a classifier head")
    if variant in IR_VARIANTS and config.fine_tune_epochs and not classifier:
        raise ConfigurationError("KD fine-tuning needs a classifier head; set fine_tune_epochs=0")

    plan = None
    if variant == "lit" or variant == "multi_ir_no_input":
        plan = validate_pairing(teacher.spec, student_spec)
    elif variant.startswith("hint_single"):
        plan = _hint_plan(teacher.spec, student_spec, variant)

    student = build_network(student_spec, seed=config.seed)
    report = RunReport(metric="accuracy" if classifier else "pixel_error",
                       config=_config_echo(config, student_spec, teacher))
    before = teacher.snapshot() if teacher is not None else None

    adapters: Dict[str, Parameter] = {}
    if plan is not None:
        copy_layers(teacher, student, plan)
        report.notes["copied"] = " ".join(plan.copy_list) or "none"
        if variant.startswith("hint_single"):
            h = hint_split(plan.k)
            t_sh, s_sh = teacher.spec.ir_shapes(), student_spec.ir_shapes()
            if t_sh[h - 1][0] != s_sh[h - 1][0]:
                adapters["out"] = _adapter("adapter.out.weight", t_sh[h - 1][0], s_sh[h - 1][0],
                                           config.seed, student.dtype)
            if variant == "hint_single_with_input" and h > 1 and t_sh[h - 2][0] != s_sh[h - 2][0]:
                adapters["in"] = _adapter("adapter.in.weight", s_sh[h - 2][0], t_sh[h - 2][0],
                                          config.seed, student.dtype)
            report.notes["adapter"] = "1x1 conv" if adapters else "none"

    frozen = set(plan.copy_list) if (plan is not None and config.freeze_copied) else set()
    params = [p for n, p in student.parameters.items()
              if not any(_in_layer(n, layer) for layer in frozen)]
    phase1_params = params + list(adapters.values())

    cache = None
    if teacher is not None:
        cache = TeacherCache(teacher, data.train, with_irs=variant in IR_VARIANTS)

    if variant == "scratch":
        fn = _task_loss(student, config.distill.penalty)
    elif variant == "kd":
        fn = _kd_fn(student, cache, config)
    else:
        fn = _ir_variant_fn(variant, teacher, student, cache, config, adapters)
    _run_phase("main", config.epochs, 0, config, student, phase1_params, data, fn, report)

    if variant in IR_VARIANTS and config.fine_tune_epochs:
        _run_phase("fine_tune", config.fine_tune_epochs, config.epochs, config, student, params,
                   data, _kd_fn(student, cache, config), report)

    if before is not None and teacher.snapshot() != before:
        raise RuntimeError("teacher parameters changed during training")
    report.final_val = evaluate(student, data.val) if len(data.val) else float("nan")
    report.final_test = evaluate(student, data.test)
    report.wall_seconds = time.perf_counter() - started
    return student, report


def fine_tune(net: SegmentedNetwork, data: Splits, config: TrainConfig, epochs: int,
              teacher: Optional[SegmentedNetwork] = None) -> RunReport:
    """Continue training ``net`` in place (masks are respected).

    Uses the KD loss when a teacher is given, the task loss otherwise, with the
    fine-tune learning-rate schedule.
    """
    report = RunReport(metric="accuracy" if net.spec.class_count else "pixel_error",
                       config=_config_echo(config, net.spec, teacher))
    if epochs:
        cfg = config.with_(fine_tune_epochs=epochs,
                           fine_tune_milestones=tuple(m for m in config.fine_tune_milestones
                                                      if m < epochs))
        if teacher is not None:
            fn = _kd_fn(net, TeacherCache(teacher, data.train, with_irs=False), cfg)
        else:
            fn = _task_loss(net, cfg.distill.penalty)
        _run_phase("fine_tune", epochs, 0, cfg, net, net.trainable(), data, fn, report)
    report.final_test = evaluate(net, data.test)
    return report


def _config_echo(config: TrainConfig, student_spec: NetworkSpec, teacher) -> dict:
    echo = asdict(config)
    echo["student_layers"] = student_spec.weighted_layer_count()
    if teacher is not None:
        echo["teacher_layers"] = teacher.spec.weighted_layer_count()
    return echo
