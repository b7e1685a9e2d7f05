"""Instantiated block-structured networks split into stem | sections | head segments."""

from __future__ import annotations

import copy
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..autodiff import ConfigurationError, DimensionError, Parameter, Tensor, default_dtype, ops
from .spec import NetworkSpec

MODES = ("train", "eval")
BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def _check_mode(mode: str) -> bool:
    if mode not in MODES:
        raise ConfigurationError(f"mode must be 'train' or 'eval', got {mode!r}")
    return mode == "train"


class SegmentedNetwork:
    """Parameters and buffers of a :class:`NetworkSpec`, plus segment-wise forward passes.

    Segments are ``stem``, ``section1`` ... ``sectionK`` and ``head``; the output
    of each section is an intermediate representation at a split point.
    """

    def __init__(self, spec: NetworkSpec, dtype=None):
        self.spec = spec.validate()
        self.dtype = dtype or default_dtype()
        self.parameters: Dict[str, Parameter] = {}
        self.buffers: Dict[str, np.ndarray] = {}

    # ------------------------------------------------------------------ structure

    @property
    def segments(self) -> List[str]:
        return ["stem"] + [f"section{i}" for i in range(1, self.k + 1)] + ["head"]

    @property
    def segment_boundaries(self) -> List[int]:
        """Start index into the ordered parameter list of each segment, plus the end."""
        names = list(self.parameters)
        bounds = []
        for seg in self.segments:
            bounds.append(next(i for i, n in enumerate(names) if _in_layer(n, seg)))
        bounds.append(len(names))
        return bounds

    @property
    def k(self) -> int:
        return len(self.spec.sections)

    def segment_parameters(self, segment: str) -> List[Parameter]:
        return [p for n, p in self.parameters.items() if _in_layer(n, segment)]

    def trainable(self) -> List[Parameter]:
        return list(self.parameters.values())

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.parameters.values()))

    def state(self) -> Dict[str, np.ndarray]:
        """Every parameter and buffer by name (parameter arrays are views)."""
        out = {n: p.data for n, p in self.parameters.items()}
        out.update(self.buffers)
        return out

    def snapshot(self) -> Dict[str, bytes]:
        return {n: a.tobytes() for n, a in self.state().items()}

    def clone(self) -> "SegmentedNetwork":
        twin = SegmentedNetwork(self.spec, self.dtype)
        for n, p in self.parameters.items():
            q = Parameter(p.data.copy(), n, dtype=self.dtype)
            if p.prune_mask is not None:
                q.prune_mask = p.prune_mask.copy()
            twin.parameters[n] = q
        twin.buffers = {n: b.copy() for n, b in self.buffers.items()}
        return twin

    # ------------------------------------------------------------------ layer helpers

    def _param(self, name: str, value: np.ndarray) -> None:
        if name in self.parameters:
            raise ConfigurationError(f"duplicate parameter name {name}")
        self.parameters[name] = Parameter(value, name, dtype=self.dtype)

    def _conv(self, prefix, x, stride=1, groups=1, bias=False):
        w = self.parameters[f"{prefix}.weight"]
        pad = w.shape[2] // 2
        b = self.parameters[f"{prefix}.bias"] if bias else None
        return ops.conv2d(x, w, b, stride=stride, padding=pad, groups=groups)

    def _bn(self, prefix, x, train):
        return ops.batch_norm(x, self.parameters[f"{prefix}.weight"],
                              self.parameters[f"{prefix}.bias"],
                              self.buffers[f"{prefix}.running_mean"],
                              self.buffers[f"{prefix}.running_var"],
                              training=train, momentum=BN_MOMENTUM, eps=BN_EPS)

    # ------------------------------------------------------------------ segment forwards

    def run_stem(self, x: Tensor, mode: str = "eval") -> Tensor:
        train = _check_mode(mode)
        expected = self.spec.input_shape
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise DimensionError(f"input {x.shape} does not match N x {expected}")
        h = x
        for i, conv in enumerate(self.spec.stem):
            h = self._conv(f"stem.{i}.conv", h, stride=conv.stride)
            h = ops.relu(self._bn(f"stem.{i}.bn", h, train))
        return h

    def run_section(self, index: int, x: Tensor, mode: str = "eval") -> Tensor:
        """Apply section ``index`` (1-based) to ``x``."""
        train = _check_mode(mode)
        sec = self.spec.sections[index - 1]
        expected_c = self._section_input_channels(index)
        if x.ndim != 4 or x.shape[1] != expected_c:
            raise DimensionError(
                f"section{index} expects {expected_c} input channels, got shape {x.shape}")
        h = x
        for b in range(sec.residual_blocks):
            pre = f"section{index}.block{b}"
            stride = sec.downsample if b == 0 else 1
            out = self._conv(f"{pre}.conv1", h, stride=stride, groups=sec.cardinality)
            out = ops.relu(self._bn(f"{pre}.bn1", out, train))
            out = self._bn(f"{pre}.bn2", self._conv(f"{pre}.conv2", out), train)
            if f"{pre}.shortcut.conv.weight" in self.parameters:
                sc = self._bn(f"{pre}.shortcut.bn",
                              self._conv(f"{pre}.shortcut.conv", h, stride=stride), train)
            else:
                sc = h
            h = ops.relu(ops.add(out, sc))
        return h

    def run_head(self, x: Tensor, mode: str = "eval") -> Tensor:
        train = _check_mode(mode)
        if self.spec.decoder is None:
            pooled = ops.global_avg_pool(x)
            return ops.linear(pooled, self.parameters["head.fc.weight"],
                              self.parameters["head.fc.bias"])
        h = x
        for i, scale in enumerate(self.spec.decoder.scales):
            if scale > 1:
                h = ops.upsample_nearest(h, scale)
            h = ops.relu(self._bn(f"head.up{i}.bn", self._conv(f"head.up{i}.conv", h), train))
        return self._conv("head.out.conv", h, bias=True)

    def forward(self, x: Tensor, mode: str = "eval") -> Tensor:
        h = self.run_stem(x, mode)
        for i in range(1, self.k + 1):
            h = self.run_section(i, h, mode)
        return self.run_head(h, mode)

    __call__ = forward

    def _section_input_channels(self, index: int) -> int:
        if index == 1:
            return self.spec.stem[-1].filters
        return self.spec.sections[index - 2].channels


def _in_layer(name: str, layer: str) -> bool:
    return name == layer or name.startswith(layer + ".")


def build_network(spec: NetworkSpec, seed: int = 0, dtype=None) -> SegmentedNetwork:
    """Instantiate ``spec`` with deterministic He fan-in initialization.

    Batch-norm scales start at one and shifts at zero; the classifier uses a
    uniform +-1/sqrt(fan_in) initialization for weight and bias. Generator
    residual blocks zero their last batch-norm scale so each block starts as
    the identity; deeper generators did not train reliably otherwise.
    """
    net = SegmentedNetwork(spec, dtype)
    rng = np.random.default_rng(seed)

    def conv(prefix, cin, cout, k, groups=1, bias=False):
        fan_in = (cin // groups) * k * k
        net._param(f"{prefix}.weight",
                   rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cout, cin // groups, k, k)))
        if bias:
            net._param(f"{prefix}.bias", np.zeros(cout))

    def bn(prefix, ch, scale=1.0):
        net._param(f"{prefix}.weight", np.full(ch, scale))
        net._param(f"{prefix}.bias", np.zeros(ch))
        net.buffers[f"{prefix}.running_mean"] = np.zeros(ch, dtype=net.dtype)
        net.buffers[f"{prefix}.running_var"] = np.ones(ch, dtype=net.dtype)

    cin = spec.input_shape[0]
    for i, c in enumerate(spec.stem):
        conv(f"stem.{i}.conv", cin, c.filters, c.kernel)
        bn(f"stem.{i}.bn", c.filters)
        cin = c.filters
    for si, sec in enumerate(spec.sections, 1):
        for b in range(sec.residual_blocks):
            pre = f"section{si}.block{b}"
            stride = sec.downsample if b == 0 else 1
            conv(f"{pre}.conv1", cin, sec.channels, 3, groups=sec.cardinality)
            bn(f"{pre}.bn1", sec.channels)
            conv(f"{pre}.conv2", sec.channels, sec.channels, 3)
            bn(f"{pre}.bn2", sec.channels, 0.0 if spec.decoder is not None else 1.0)
            if stride != 1 or cin != sec.channels:
                conv(f"{pre}.shortcut.conv", cin, sec.channels, 1)
                bn(f"{pre}.shortcut.bn", sec.channels)
            cin = sec.channels
    if spec.decoder is None:
        bound = 1.0 / np.sqrt(cin)
        net._param("head.fc.weight", rng.uniform(-bound, bound, size=(spec.class_count, cin)))
        net._param("head.fc.bias", rng.uniform(-bound, bound, size=spec.class_count))
    else:
        for i, width in enumerate(spec.decoder.stages):
            conv(f"head.up{i}.conv", cin, width, 3)
            bn(f"head.up{i}.bn", width)
            cin = width
        conv("head.out.conv", cin, spec.decoder.out_channels, 3, bias=True)
    return net


def forward_collect(net: SegmentedNetwork, x: Tensor, mode: str = "eval") -> Tuple[Tensor, List[Tensor]]:
    """Run the full network and return (head output, [IR after each section])."""
    h = net.run_stem(x, mode)
    irs = []
    for i in range(1, net.k + 1):
        h = net.run_section(i, h, mode)
        irs.append(h)
    return net.run_head(h, mode), irs


def weighted_layers(net: SegmentedNetwork) -> int:
    return net.spec.weighted_layer_count()
