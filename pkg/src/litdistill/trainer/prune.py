"""Magnitude pruning with persistent masks."""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

from ..autodiff import Parameter
from ..netgraph import SegmentedNetwork
from .config import PruneSpec


def prunable(net: SegmentedNetwork) -> List[Parameter]:
    """Convolution and fully-connected weights (batch-norm affine terms are left alone)."""
    return [p for n, p in net.parameters.items() if n.endswith(".weight") and p.ndim >= 2]


def _smallest(magnitudes: np.ndarray, count: int) -> np.ndarray:
    # stable ordering so ties always resolve by position
    return np.argsort(magnitudes, kind="stable")[:count]


def magnitude_prune(net: SegmentedNetwork, spec: PruneSpec) -> Tuple[SegmentedNetwork, float]:
    """Zero the smallest-magnitude weights and attach masks that keep them at zero.

    ``per-tensor`` prunes round(sparsity * size) entries of every weight tensor;
    ``global`` ranks all prunable weights together. Existing masks are kept.
    Returns the network (modified in place) and the achieved zero fraction over
    prunable weights.
    """
    params = prunable(net)
    if spec.scope == "per-tensor":
        for p in params:
            count = int(round(spec.sparsity * p.data.size))
            mask = np.ones(p.data.size, dtype=p.data.dtype)
            mask[_smallest(np.abs(p.data).ravel(), count)] = 0
            _merge_mask(p, mask.reshape(p.shape))
    else:
        flat = np.concatenate([np.abs(p.data).ravel().astype(np.float64) for p in params])
        count = int(round(spec.sparsity * flat.size))
        keep = np.ones(flat.size, dtype=bool)
        keep[_smallest(flat, count)] = False
        offset = 0
        for p in params:
            size = p.data.size
            _merge_mask(p, keep[offset:offset + size].reshape(p.shape).astype(p.data.dtype))
            offset += size
    return net, achieved_sparsity(net)


def _merge_mask(p: Parameter, mask: np.ndarray) -> None:
    p.prune_mask = mask if p.prune_mask is None else p.prune_mask * mask
    p.apply_mask()
    p.momentum_buffer *= p.prune_mask


def achieved_sparsity(net: SegmentedNetwork) -> float:
    params = prunable(net)
    total = sum(p.data.size for p in params)
    zeros = sum(int(p.data.size - np.count_nonzero(p.prune_mask)) if p.prune_mask is not None else 0
                for p in params)
    return zeros / total if total else 0.0
