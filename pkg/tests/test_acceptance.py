"""Acceptance suite: each test checks one criterion and records a PASS/FAIL line.

The lines are printed in a summary section at the end of the pytest run (and
immediately with ``-s``). Criteria 7 and 10 train real models and take several
minutes; run just this module with ``pytest tests/test_acceptance.py``.
"""

import contextlib
import csv
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from litdistill.autodiff import PRIMITIVE_KINDS, Parameter, Tensor, backward, ops, primitive_forward
from litdistill.cli import main
from litdistill.data import classification_splits, translation_splits
from litdistill.losses import DistillConfig, cross_entropy, ir_loss, ir_penalty, ir_terms, kd_loss, lit_loss
from litdistill.netgraph import build_network, copy_layers, full_copy_plan, generator_spec, resnet_spec, validate_pairing
from litdistill.trainer import PruneSpec, TrainConfig, evaluate, fine_tune, magnitude_prune, preset, prunable, train

import oracles
from gradcheck import EPS, RTOL, check_op, relative_error
from toys import t64, toy_batch, toy_pair

REPORT = {}
PENALTIES = ("L2", "L1", "SmoothedL1")


def record(number, ok, detail, extra=()):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    REPORT[number] = [line] + [f"    {e}" for e in extra]
    print(line)
    for e in extra:
        print(f"    {e}")
    assert ok, line


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


# ----------------------------------------------------------------------------- 1. loss oracles


def test_01_loss_oracle_equivalence():
    start = time.perf_counter()
    worst = {"kd": 0.0, "ir": 0.0, "lit": 0.0}
    for case in range(50):
        rng = np.random.default_rng(10_000 + case)
        n, c = rng.integers(1, 6), rng.integers(2, 9)
        s, t = rng.normal(0, 3, size=(n, c)), rng.normal(0, 3, size=(n, c))
        y = rng.integers(0, c, size=n)
        alpha, tau = float(rng.uniform()), float(rng.uniform(0.2, 10))
        got = kd_loss(t64(s), t64(t), y, alpha, tau).item()
        worst["kd"] = max(worst["kd"], rel(got, oracles.kd(s.tolist(), t.tolist(), y.tolist(), alpha, tau)))

        teacher, student = toy_pair(20_000 + case, teacher_blocks=(1 + case % 2, 2, 1))
        x, y = toy_batch(case, n=2)
        kind = PENALTIES[case % 3]
        got = ir_loss(teacher, student, t64(x), kind).item()
        worst["ir"] = max(worst["ir"], rel(got, oracles.ir(teacher, student, x, kind)))

        cfg = DistillConfig(tau=float(rng.uniform(0.5, 8)), alpha=float(rng.uniform()),
                            beta=float(rng.uniform()), penalty=kind)
        got = lit_loss(teacher, student, t64(x), y, cfg).item()
        want = oracles.lit(teacher, student, x, y.tolist(), cfg.alpha, cfg.beta, cfg.tau, kind)
        worst["lit"] = max(worst["lit"], rel(got, want))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-6 and elapsed < 10
    record(1, ok, "50 cases each, worst relative error "
           + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f", {elapsed:.1f}s")


# ----------------------------------------------------------------------------- 2. gradients


def _away(a, kinks=(0.0,), margin=2e-2):
    for k in kinks:
        close = np.abs(a - k) < margin
        a[close] = k + np.where(a[close] >= k, margin, -margin) * 2
    return a


def _primitive_case(kind, r):
    """Random (arrays, attrs) for one primitive."""
    n, c, h = int(r.integers(1, 4)), int(r.integers(1, 5)), int(r.integers(2, 6))
    if kind == "linear":
        i, o = int(r.integers(1, 6)), int(r.integers(1, 6))
        return [r.normal(size=(n, i)), r.normal(size=(o, i)), r.normal(size=o)], {}
    if kind == "conv2d":
        g = int(r.choice([1, 2]))
        cin, cout, k = g * int(r.integers(1, 3)), g * int(r.integers(1, 3)), int(r.choice([1, 3]))
        size = int(r.integers(k, 6))
        attrs = {"stride": int(r.integers(1, 3)), "padding": int(r.integers(0, k // 2 + 1)), "groups": g}
        return [r.normal(size=(n, cin, size, size)), r.normal(size=(cout, cin // g, k, k)),
                r.normal(size=cout)], attrs
    if kind == "batch_norm":
        return [r.normal(size=(n + 1, c, h, h)), r.normal(size=c), r.normal(size=c)], {}
    if kind in ("relu", "abs"):
        return [_away(r.normal(size=(n, c, h)))], {}
    if kind == "huber_unit":
        return [_away(r.normal(size=(n, c, h)) * 2, (1.0, -1.0))], {}
    if kind in ("add", "sub", "mul"):
        shape = (n, c, h)
        other = tuple(d if r.uniform() < 0.6 else 1 for d in shape)
        return [r.normal(size=shape), r.normal(size=other)], {}
    if kind in ("global_avg_pool", "upsample_nearest"):
        attrs = {"factor": int(r.integers(1, 4))} if kind == "upsample_nearest" else {}
        return [r.normal(size=(n, c, h, h))], attrs
    if kind in ("log_softmax_temperature", "softmax_temperature"):
        return [r.normal(0, 2, size=(n, c + 1))], {"tau": float(r.uniform(0.3, 8))}
    if kind in ("mean", "sum"):
        return [r.normal(size=(n, c, h))], {"axis": r.choice([None, 0, 1, 2])}
    if kind == "square":
        return [r.normal(size=(n, c, h))], {}
    raise AssertionError(f"no case generator for {kind}")


@contextlib.contextmanager
def _kink_pattern():
    """Record which side of every relu/abs/huber kink each element falls on."""
    seen = []
    saved = {name: getattr(ops, name) for name in ("relu", "abs", "huber_unit")}

    def wrap(name, side):
        def fn(x, *args, **kw):
            seen.append(side(x.data))
            return saved[name](x, *args, **kw)
        return fn

    ops.relu = wrap("relu", lambda a: a > 0)
    ops.abs = wrap("abs", lambda a: a > 0)
    ops.huber_unit = wrap("huber_unit", lambda a: np.stack([a > 1, a < -1]))
    try:
        yield seen
    finally:
        for name, fn in saved.items():
            setattr(ops, name, fn)


def _evaluate(fn):
    with _kink_pattern() as seen:
        value = fn().item()
    return value, seen


def _same_pattern(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def _sampled_check(fn, params, rng, per_tensor=6):
    """Finite differences on a random subset of each parameter's entries.

    Entries whose +-EPS interval crosses a relu/abs/huber kink are not
    differentiable there; they are resampled and counted in ``skipped``.
    """
    for p in params:
        p.grad = None
    grads = backward(fn(), params)
    _, base = _evaluate(fn)
    worst, skipped = 0.0, 0
    for p in params:
        flat = p.data.reshape(-1)
        num, ana = [], []
        for idx in rng.permutation(flat.size):
            if len(num) == per_tensor:
                break
            saved = flat[idx]
            flat[idx] = saved + EPS
            up, up_seen = _evaluate(fn)
            flat[idx] = saved - EPS
            down, down_seen = _evaluate(fn)
            flat[idx] = saved
            if not (_same_pattern(base, up_seen) and _same_pattern(base, down_seen)):
                skipped += 1
                continue
            num.append((up - down) / (2 * EPS))
            ana.append(grads[p.name].reshape(-1)[idx])
        worst = max(worst, relative_error(np.array(num), np.array(ana)))
    return worst, skipped


def _composite_cases(rng, case):
    """(name, loss closure, parameters) for the composite losses."""
    kind = PENALTIES[case % 3]
    n, c = int(rng.integers(1, 5)), int(rng.integers(2, 7))
    s = Parameter(rng.normal(0, 2, size=(n, c)), "s", dtype=np.float64)
    t = rng.normal(0, 2, size=(n, c))
    y = rng.integers(0, c, size=n)
    alpha, tau = float(rng.uniform()), float(rng.uniform(0.5, 8))
    yield "kd_loss", lambda: kd_loss(s, t64(t), y, alpha, tau), [s]
    yield "cross_entropy", lambda: cross_entropy(s, y), [s]
    a = Parameter(_away(rng.normal(size=(n, 3, 2, 2)) * 2, (1.0, -1.0)), "a", dtype=np.float64)
    b = rng.normal(size=(n, 3, 2, 2)) * 0.01
    yield f"ir_penalty[{kind}]", lambda: ir_penalty(a, t64(b), kind), [a]
    teacher, student = toy_pair(30_000 + case)
    x, yy = toy_batch(case, n=2)
    params = list(student.parameters.values())
    yield f"ir_loss[{kind}]", lambda: ir_loss(teacher, student, t64(x), kind), params
    cfg = DistillConfig(tau=tau, alpha=alpha, beta=float(rng.uniform()), penalty=kind)
    yield "lit_loss", lambda: lit_loss(teacher, student, t64(x), yy, cfg), params


def test_02_gradient_correctness():
    start = time.perf_counter()
    worst, count, failures = 0.0, 0, []
    for kind in PRIMITIVE_KINDS:
        for rep in range(6):
            rng = np.random.default_rng([zlib.crc32(kind.encode()), rep])
            arrays, attrs = _primitive_case(kind, rng)
            if kind == "batch_norm":
                rm, rv = rng.normal(size=arrays[1].shape), rng.uniform(0.5, 2, size=arrays[1].shape)
                training = rep % 2 == 0

                def op(x, g, b, rm=rm, rv=rv, training=training):
                    return ops.batch_norm(x, g, b, rm.copy(), rv.copy(), training=training)
            else:
                def op(*ts, kind=kind, **kw):
                    return primitive_forward(kind, ts, kw)
            err = check_op(op, arrays, rng, attrs)
            count += 1
            worst = max(worst, err)
            if err > RTOL:
                failures.append(f"{kind} {[a.shape for a in arrays]} {attrs}: {err:.2e}")
    skipped = 0
    for case in range(5):
        rng = np.random.default_rng(40_000 + case)
        for name, fn, params in _composite_cases(rng, case):
            err, skips = _sampled_check(fn, params, rng)
            skipped += skips
            count += 1
            worst = max(worst, err)
            if err > RTOL:
                failures.append(f"{name} case {case}: {err:.2e}")
    elapsed = time.perf_counter() - start
    ok = not failures and count >= 100 and elapsed < 60
    record(2, ok, f"{count} randomized checks over {len(PRIMITIVE_KINDS)} primitives and 5 losses, "
           f"worst relative error {worst:.1e}, {skipped} entries resampled at kinks, {elapsed:.1f}s",
           failures)


# ----------------------------------------------------------------------------- 3. endpoints


def test_03_lit_endpoints_and_linearity():
    worst_end, worst_lin = 0.0, 0.0
    for seed in range(3):
        teacher, student = toy_pair(50 + seed)
        x, y = toy_batch(50 + seed)
        tau, alpha = 6.0, 0.95
        kd = kd_loss(student(t64(x)), teacher(t64(x)), y, alpha, tau).item()
        ir = ir_loss(teacher, student, t64(x)).item()
        at = {b: lit_loss(teacher, student, t64(x), y, DistillConfig(tau, alpha, b / 10)).item()
              for b in range(11)}
        worst_end = max(worst_end, rel(at[10], kd), rel(at[0], ir))
        for b in range(1, 10):
            worst_lin = max(worst_lin, rel(at[b], b / 10 * kd + (1 - b / 10) * ir))
    ok = worst_end <= 1e-7 and worst_lin <= 1e-6
    record(3, ok, f"endpoints {worst_end:.1e} (<= 1e-7), linearity {worst_lin:.1e} (<= 1e-6)")


# ----------------------------------------------------------------------------- shared small task


@pytest.fixture(scope="module")
def small_task():
    data = classification_splits(seed=7, classes=4, size=8, train=192, val=48, test=96)
    spec_t = resnet_spec([2, 1, 1], channels=(4, 8, 8), input_shape=(3, 8, 8), class_count=4)
    spec_s = resnet_spec([1, 1, 1], channels=(4, 8, 8), input_shape=(3, 8, 8), class_count=4)
    teacher, _ = train("scratch", None, spec_t, data, TrainConfig(epochs=4, milestones=(3,)))
    return data, teacher, spec_s


# ----------------------------------------------------------------------------- 4. frozen teacher


def test_04_frozen_teacher(small_task):
    data, teacher, spec_s = small_task
    before = {n: a.tobytes() for n, a in teacher.state().items()}
    cfg = preset("lit", 0.1, epochs=3, milestones=(2,), fine_tune_epochs=2, fine_tune_milestones=(1,))
    train("lit", teacher, spec_s, data, cfg)
    changed = [n for n, a in teacher.state().items() if a.tobytes() != before[n]]
    record(4, not changed, f"{len(before)} teacher arrays compared after a full LIT run, "
           f"{len(changed)} changed")


# ----------------------------------------------------------------------------- 5. block isolation


def test_05_block_isolation():
    teacher, student = toy_pair(5)
    assert student.k == 3
    x, _ = toy_batch(5)
    params = list(student.parameters.values())
    full = backward(ir_loss(teacher, student, t64(x)), params)
    term = backward(ir_terms(teacher, student, t64(x))[1], params)
    names = [n for n in student.parameters if n.startswith("section2.")]
    diff = max(float(np.max(np.abs(full[n] - term[n]))) for n in names)
    record(5, diff <= 1e-10, f"max |grad_full - grad_term2| over {len(names)} section-2 tensors {diff:.1e}")


# ----------------------------------------------------------------------------- 6. copy identity


def test_06_copy_identity(small_task):
    data, teacher, _ = small_task
    student = build_network(teacher.spec, seed=123)
    copy_layers(teacher, student, full_copy_plan(validate_pairing(teacher.spec, student.spec)))
    x = Tensor(data.test.inputs, dtype=teacher.dtype)
    loss = ir_loss(teacher, student, x).item()
    acc_t, acc_s = evaluate(teacher, data.test), evaluate(student, data.test)
    record(6, loss == 0.0 and acc_t == acc_s,
           f"post-copy ir_loss {loss}, test accuracy teacher {acc_t} student {acc_s}")


# ----------------------------------------------------------------------------- 7. desk-scale comparison

DESK_VARIANTS = ("scratch", "kd", "lit", "hint_single_no_input", "hint_single_with_input",
                 "multi_ir_no_input")
DESK_CHANNELS = (8, 16, 32)


def _desk_seed(seed):
    data = classification_splits(seed=seed, train=2000, val=300, test=1000)
    teacher_cfg = preset("scratch", 0.075, lr0=0.05, seed=seed)
    teacher, t_report = train("scratch", None, resnet_spec([3, 3, 3], DESK_CHANNELS), data, teacher_cfg)
    # same schedule for an 8-layer model: checks that the task rewards depth
    _, shallow = train("scratch", None, resnet_spec([1, 1, 1], DESK_CHANNELS), data, teacher_cfg)
    out = {"teacher": t_report.final_test, "shallow_same_schedule": shallow.final_test}
    for v in DESK_VARIANTS:
        _, r = train(v, None if v == "scratch" else teacher, resnet_spec([1, 1, 1], DESK_CHANNELS),
                     data, preset(v, 0.05, seed=seed))
        out[v] = r.final_test
    return out


@pytest.fixture(scope="module")
def desk_results():
    start = time.perf_counter()
    seeds = list(range(5))
    workers = min(len(seeds), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_desk_seed, seeds))
    else:
        rows = [_desk_seed(s) for s in seeds]
    return rows, time.perf_counter() - start, workers


def test_07_desk_scale_direction(desk_results):
    rows, elapsed, workers = desk_results
    mean = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
    std = {k: float(np.std([r[k] for r in rows])) for k in rows[0]}
    ok = mean["lit"] > mean["kd"] and mean["lit"] > mean["scratch"] and elapsed <= 20 * 60
    extra = [f"{k:24s} mean {mean[k]:.4f} +- {std[k]:.4f}  per seed "
             + " ".join(f"{r[k]:.3f}" for r in rows) for k in ("teacher",) + DESK_VARIANTS]
    record(7, ok, f"5 seeds: lit {mean['lit']:.4f}, kd {mean['kd']:.4f}, scratch {mean['scratch']:.4f}; "
           f"{elapsed / 60:.1f} min on {workers} worker(s)", extra)


def test_dataset_rewards_depth(desk_results):
    rows, _, _ = desk_results
    deep = np.mean([r["teacher"] for r in rows])
    shallow = np.mean([r["shallow_same_schedule"] for r in rows])
    print(f"20-layer {deep:.4f} vs 8-layer {shallow:.4f} on the same schedule")
    assert deep > shallow


# ----------------------------------------------------------------------------- 8. penalty sweep

SWEEP_CONFIG = """\
dataset.seed = 3
dataset.classes = 4
dataset.size = 8
dataset.train = 128
dataset.val = 32
dataset.test = 64
student.blocks = 1,1,1
student.channels = 4,8,8
teacher.blocks = 2,1,1
teacher.channels = 4,8,8
teacher.epochs = 3
train.variant = lit
train.epochs = 2
train.fine_tune_epochs = 1
sweep.param = penalty
sweep.seeds = 0,1,2
"""


def test_08_penalty_sweep(tmp_path):
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text(SWEEP_CONFIG)
    codes = [main(["sweep", "--config", str(cfg), "--out", str(tmp_path / d)]) for d in ("a", "b")]
    same = (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()
    with open(tmp_path / "a" / "sweep.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    extra = []
    for kind in PENALTIES:
        acc = [float(r["test"]) for r in rows if r["value"] == kind]
        extra.append(f"{kind:10s} test {np.mean(acc):.4f} +- {np.std(acc):.4f} over {len(acc)} seeds")
    ok = codes == [0, 0] and same and len(rows) == 9
    record(8, ok, f"{len(rows)} rows, exit codes {codes}, rerun byte-identical {same}", extra)


# ----------------------------------------------------------------------------- 9. pruning


def test_09_pruning_properties(small_task):
    data, teacher, _ = small_task
    problems = []
    for sparsity in (0.3, 0.5, 0.9):
        net = teacher.clone()
        magnitude_prune(net, PruneSpec(sparsity))
        for p in prunable(net):
            zeros = int(np.sum(p.data == 0))
            if abs(zeros / p.data.size - sparsity) > 1 / p.data.size:
                problems.append(f"{p.name} at {sparsity}: {zeros}/{p.data.size} zeros")
        masks = {p.name: p.prune_mask.copy() for p in prunable(net)}
        fine_tune(net, data, TrainConfig(epochs=1, milestones=()), 2)
        for p in prunable(net):
            if np.any(p.data[masks[p.name] == 0]):
                problems.append(f"{p.name} at {sparsity}: masked weight changed during fine-tuning")
    net = teacher.clone()
    magnitude_prune(net, PruneSpec(0.0))
    same = evaluate(net, data.test) == evaluate(teacher, data.test)
    if not same:
        problems.append("sparsity 0 changed test accuracy")
    record(9, not problems, "sparsity within 1/|tensor|, masks hold through fine-tuning, "
           "sparsity 0 is the identity" if not problems else f"{len(problems)} problems", problems)


# ----------------------------------------------------------------------------- 10. generator compression


def _generator_seed(seed):
    data = translation_splits(seed=seed, train=400, val=100, test=200)
    cfg = TrainConfig(epochs=10, milestones=(5, 7), lr0=0.05, batch_size=8, seed=seed,
                      distill=DistillConfig(beta=0.0))
    teacher, t = train("scratch", None, generator_spec(6), data, cfg)
    _, lit = train("lit", teacher, generator_spec(2), data, cfg.with_(freeze_copied=True))
    _, scratch = train("scratch", None, generator_spec(2), data, cfg)
    return t.final_test, lit.final_test, scratch.final_test


def test_10_generator_compression():
    start = time.perf_counter()
    rows = [_generator_seed(s) for s in range(3)]
    elapsed = time.perf_counter() - start
    teacher, lit, scratch = (float(np.mean(c)) for c in zip(*rows))
    ok = lit <= 1.1 * teacher and lit < scratch and elapsed <= 10 * 60
    extra = [f"seed {i}: teacher {r[0]:.4f} lit {r[1]:.4f} scratch {r[2]:.4f}" for i, r in enumerate(rows)]
    record(10, ok, f"mean pixel error teacher {teacher:.4f}, lit {lit:.4f} (limit {1.1 * teacher:.4f}), "
           f"scratch {scratch:.4f}; {elapsed / 60:.1f} min", extra)


# ----------------------------------------------------------------------------- 11. determinism


def test_11_cli_determinism(tmp_path):
    base = SWEEP_CONFIG.replace("sweep.param = penalty\nsweep.seeds = 0,1,2\n", "")
    mismatched = []
    for variant in ("scratch", "lit"):
        cfg = tmp_path / f"{variant}.cfg"
        cfg.write_text(base.replace("train.variant = lit", f"train.variant = {variant}"))
        outs = [tmp_path / f"{variant}{i}" for i in range(2)]
        for out in outs:
            assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        for name in ("metrics.csv", "model.litm"):
            if (outs[0] / name).read_bytes() != (outs[1] / name).read_bytes():
                mismatched.append(f"{variant}/{name}")
    record(11, not mismatched, "metrics.csv and model.litm byte-identical across reruns (scratch, lit)"
           if not mismatched else f"differences: {mismatched}")
