"""Deterministic synthetic datasets and the small-image binary reader."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Tuple

import numpy as np

from .netgraph.checkpoint import FormatError, read_container, write_container

RECORD_PIXELS = 3 * 32 * 32
RECORD_BYTES = 1 + RECORD_PIXELS


@dataclass
class Dataset:
    """A batch of normalized inputs with labels (or target images).

    ``mean``/``std`` are the per-channel statistics that were used to
    normalize ``inputs``.
    """

    inputs: np.ndarray
    targets: np.ndarray
    split: str
    mean: np.ndarray
    std: np.ndarray
    class_count: Optional[int] = None

    def __len__(self):
        return len(self.inputs)

    @property
    def is_classification(self) -> bool:
        return self.class_count is not None

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        return ((raw - self.mean[None, :, None, None]) / self.std[None, :, None, None]).astype(np.float32)

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std[None, :, None, None] + self.mean[None, :, None, None]

    def subset(self, index: np.ndarray, split: str) -> "Dataset":
        return replace(self, inputs=self.inputs[index], targets=self.targets[index], split=split)

    def batches(self, batch_size: int, seed: int = 0, epoch: int = 0,
                shuffle: bool = True) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        """Yield mini-batches in an order determined by (seed, epoch)."""
        n = len(self)
        order = (np.random.default_rng([seed, epoch]).permutation(n) if shuffle
                 else np.arange(n))
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            yield self.inputs[idx], self.targets[idx]


def _normalized(raw: np.ndarray, targets: np.ndarray, split: str,
                class_count: Optional[int]) -> Dataset:
    mean = raw.mean(axis=(0, 2, 3))
    std = raw.std(axis=(0, 2, 3))
    std = np.where(std > 0, std, 1.0)
    ds = Dataset(inputs=np.empty(0), targets=targets, split=split, mean=mean, std=std,
                 class_count=class_count)
    ds.inputs = ds.normalize(raw)
    return ds


def split_dataset(ds: Dataset, val_fraction: float, test_fraction: float,
                  seed: int) -> Tuple[Dataset, Dataset, Dataset]:
    """Partition by a seeded permutation into train / val / test."""
    n = len(ds)
    order = np.random.default_rng([seed, 7919]).permutation(n)
    n_test = int(round(n * test_fraction))
    n_val = int(round(n * val_fraction))
    test = np.sort(order[:n_test])
    val = np.sort(order[n_test:n_test + n_val])
    train = np.sort(order[n_test + n_val:])
    return ds.subset(train, "train"), ds.subset(val, "val"), ds.subset(test, "test")


# ------------------------------------------------------------------------------ classification

def _grating(freq, theta, phase, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return np.cos(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)


def gen_synthetic_classification(seed: int, classes: int = 10, size: int = 16,
                                 per_class: int = 100, noise: float = 0.5,
                                 textures: int = 3) -> Dataset:
    """Images tiled by four textured quadrants; the class is a function of the arrangement.

    A seeded bank of coloured gratings is drawn and every assignment of bank
    textures to the four quadrants is mapped to a class by a seeded balanced
    table, so each class is a union of several unrelated arrangements.
    Samples draw random phases, small orientation jitter, per-quadrant
    amplitudes, a random global sign and pixel noise. Class means are
    therefore zero and recognising a class means locating each texture and
    combining the four findings, which rewards depth.
    """
    if classes < 2 or size < 8:
        raise ValueError("need classes >= 2 and size >= 8")
    rng = np.random.default_rng([seed, 101])
    while textures ** 4 < classes:
        textures += 1
    bank = []
    for _ in range(textures):
        color = rng.normal(size=3)
        bank.append((rng.uniform(0.15, 0.4), rng.uniform(0, np.pi), color / np.linalg.norm(color)))
    table = rng.permutation(textures ** 4) % classes
    arrangements = [np.flatnonzero(table == c) for c in range(classes)]

    n = classes * per_class
    labels = np.repeat(np.arange(classes), per_class)
    raw = np.zeros((n, 3, size, size), dtype=np.float64)
    h = size // 2
    corners = ((0, 0), (0, h), (h, 0), (h, h))
    for i, label in enumerate(labels):
        code = rng.choice(arrangements[label])
        sign = rng.choice([-1.0, 1.0])
        for q, (r0, c0) in enumerate(corners):
            freq, theta, color = bank[(code // textures ** q) % textures]
            pattern = _grating(freq, theta + rng.normal(0, 0.1), rng.uniform(0, 2 * np.pi), h, h)
            amp = rng.uniform(0.6, 1.4)
            raw[i, :, r0:r0 + h, c0:c0 + h] += sign * amp * color[:, None, None] * pattern[None]
        raw[i] += rng.normal(0, noise, size=(3, size, size))
    return _normalized(raw, labels.astype(np.int64), "all", classes)


# ------------------------------------------------------------------------------ translation

class ColorBlurTransform:
    """A fixed seeded image map: per-pixel colour remap tanh(Mx + c), then a 3x3 blur."""

    def __init__(self, seed: int):
        rng = np.random.default_rng([seed, 202])
        self.mix = rng.normal(0, 0.9, size=(3, 3)) + np.eye(3)
        self.offset = rng.normal(0, 0.3, size=3)
        k = np.abs(rng.normal(size=(3, 3))) + 0.5
        self.kernel = k / k.sum()

    def __call__(self, x: np.ndarray) -> np.ndarray:
        mixed = np.tanh(np.einsum("ij,njhw->nihw", self.mix, x) + self.offset[None, :, None, None])
        padded = np.pad(mixed, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
        h, w = x.shape[2:]
        out = np.zeros_like(mixed)
        for i in range(3):
            for j in range(3):
                out += self.kernel[i, j] * padded[:, :, i:i + h, j:j + w]
        return out


def _smooth_images(rng, n, size):
    """Random colour images built from a few low-frequency gratings and blobs."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = np.zeros((n, 3, size, size))
    for i in range(n):
        for _ in range(3):
            freq = rng.uniform(0.5, 3.0)
            theta = rng.uniform(0, np.pi)
            phase = rng.uniform(0, 2 * np.pi)
            pattern = np.cos(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
            out[i] += rng.normal(0, 0.6, size=3)[:, None, None] * pattern[None]
        cy, cx = rng.uniform(0, 1, size=2)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * rng.uniform(0.01, 0.05)))
        out[i] += rng.normal(0, 1.0, size=3)[:, None, None] * blob[None]
    return out


def gen_synthetic_translation(seed: int, size: int = 16, n: int = 1000) -> Dataset:
    """Pairs (x, f(x)) with f a fixed seeded colour remap followed by a blur.

    Inputs are normalized; targets are kept in the raw output range of f.
    """
    if size < 8:
        raise ValueError("size must be >= 8")
    rng = np.random.default_rng([seed, 303])
    raw = _smooth_images(rng, n, size)
    transform = ColorBlurTransform(seed)
    targets = transform(raw).astype(np.float32)
    return _normalized(raw, targets, "all", None)


# ------------------------------------------------------------------------------ binary reader

def load_small_image_binary(path, limit: Optional[int] = None) -> Dataset:
    """Read records of one label byte followed by 3072 channel-major pixel bytes."""
    length = os.path.getsize(path)
    if length % RECORD_BYTES:
        whole = length // RECORD_BYTES
        raise FormatError(
            f"{path}: truncated record at byte offset {whole * RECORD_BYTES} "
            f"(file length {length} is not a multiple of {RECORD_BYTES})")
    available = length // RECORD_BYTES
    count = available if limit is None else max(0, min(limit, available))
    with open(path, "rb") as fh:
        raw = np.frombuffer(fh.read(count * RECORD_BYTES), dtype=np.uint8)
    records = raw.reshape(count, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.nonzero(labels >= 10)[0]
    if bad.size:
        raise FormatError(f"{path}: label {labels[bad[0]]} >= 10 at byte offset {bad[0] * RECORD_BYTES}")
    pixels = records[:, 1:].reshape(count, 3, 32, 32).astype(np.float64) / 255.0
    if count == 0:
        return Dataset(inputs=np.zeros((0, 3, 32, 32), np.float32), targets=labels, split="all",
                       mean=np.zeros(3), std=np.ones(3), class_count=10)
    return _normalized(pixels, labels, "all", 10)


# ------------------------------------------------------------------------------ caching

def save_dataset(ds: Dataset, path) -> None:
    tensors = {"inputs": ds.inputs, "targets": ds.targets, "mean": ds.mean.astype(np.float64),
               "std": ds.std.astype(np.float64),
               "class_count": np.array([ds.class_count or 0], dtype=np.int64)}
    write_container(path, tensors)


def load_dataset(path, split: str = "all") -> Dataset:
    _, t = read_container(path)
    count = int(t["class_count"][0])
    return Dataset(inputs=t["inputs"], targets=t["targets"], split=split, mean=t["mean"],
                   std=t["std"], class_count=count or None)


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset


def classification_splits(seed: int = 0, classes: int = 10, size: int = 16,
                          train: int = 5000, val: int = 500, test: int = 1000,
                          noise: float = 0.5) -> Splits:
    """Generate one balanced pool and partition it into train / val / test."""
    total = train + val + test
    per_class = -(-total // classes)
    pool = gen_synthetic_classification(seed, classes, size, per_class, noise=noise)
    n = len(pool)
    tr, va, te = split_dataset(pool, val / n, test / n, seed)
    if len(tr) > train:
        tr = tr.subset(np.arange(train), "train")
    return Splits(tr, va, te)


def translation_splits(seed: int = 0, size: int = 16, train: int = 1000, val: int = 100,
                       test: int = 200) -> Splits:
    pool = gen_synthetic_translation(seed, size, train + val + test)
    n = len(pool)
    tr, va, te = split_dataset(pool, val / n, test / n, seed)
    return Splits(tr, va, te)
