"""Declarative network specifications and the preset zoo."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

from ..autodiff import ConfigurationError


@dataclass(frozen=True)
class ConvSpec:
    filters: int
    kernel: int = 3
    stride: int = 1


@dataclass(frozen=True)
class SectionSpec:
    residual_blocks: int
    channels: int
    downsample: int = 1
    cardinality: int = 1


@dataclass(frozen=True)
class DecoderSpec:
    """Upsampling head: each stage is a nearest upsample + conv/bn/relu, then a plain output conv.

    ``scales`` gives the upsampling factor per stage; empty means 2 everywhere.
    """

    stages: Tuple[int, ...]
    out_channels: int
    scales: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "scales", tuple(self.scales) or (2,) * len(self.stages))
        if len(self.scales) != len(self.stages) or min(self.scales, default=1) < 1:
            raise ConfigurationError("decoder needs one positive scale per stage")


@dataclass(frozen=True)
class NetworkSpec:
    stem: Tuple[ConvSpec, ...]
    sections: Tuple[SectionSpec, ...]
    input_shape: Tuple[int, int, int]
    class_count: Optional[int] = None
    decoder: Optional[DecoderSpec] = None

    def __post_init__(self):
        # accept lists from callers and config files
        object.__setattr__(self, "stem", tuple(self.stem))
        object.__setattr__(self, "sections", tuple(self.sections))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))

    @property
    def is_generator(self) -> bool:
        return self.decoder is not None

    def validate(self) -> "NetworkSpec":
        if not self.stem:
            raise ConfigurationError("stem needs at least one convolution")
        if not self.sections:
            raise ConfigurationError("a network needs at least one section")
        if (self.class_count is None) == (self.decoder is None):
            raise ConfigurationError("exactly one of class_count and decoder must be given")
        if self.class_count is not None and self.class_count < 2:
            raise ConfigurationError(f"class_count must be >= 2, got {self.class_count}")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigurationError(f"input_shape must be (C, H, W), got {self.input_shape}")
        for i, sec in enumerate(self.sections, 1):
            if sec.residual_blocks < 1:
                raise ConfigurationError(f"section {i}: residual_blocks must be >= 1")
            if sec.channels < 1 or sec.downsample < 1:
                raise ConfigurationError(f"section {i}: channels and downsample must be positive")
            if sec.cardinality < 1 or sec.channels % sec.cardinality:
                raise ConfigurationError(
                    f"section {i}: cardinality {sec.cardinality} does not divide "
                    f"{sec.channels} channels")
        for shape in self.ir_shapes():
            if shape[1] < 1 or shape[2] < 1:
                raise ConfigurationError(f"input {self.input_shape} is too small for the strides")
        return self

    def stem_shape(self) -> Tuple[int, int, int]:
        c, h, w = self.input_shape
        for conv in self.stem:
            pad = conv.kernel // 2
            h = (h + 2 * pad - conv.kernel) // conv.stride + 1
            w = (w + 2 * pad - conv.kernel) // conv.stride + 1
            c = conv.filters
        return c, h, w

    def ir_shapes(self) -> List[Tuple[int, int, int]]:
        """Per-sample output shape of each section, i.e. at each split point."""
        _, h, w = self.stem_shape()
        shapes = []
        for sec in self.sections:
            s = sec.downsample
            h, w = (h - 1) // s + 1, (w - 1) // s + 1
            shapes.append((sec.channels, h, w))
        return shapes

    def weighted_layer_count(self) -> int:
        """Convolution and fully-connected layers on the main path.

        Projection shortcuts are not counted, so a [n, n, n] residual spec
        gives 6n + 2.
        """
        count = len(self.stem) + sum(2 * s.residual_blocks for s in self.sections)
        if self.decoder is not None:
            return count + len(self.decoder.stages) + 1
        return count + 1

    def to_dict(self) -> dict:
        return asdict(self)

    def encode(self) -> bytes:
        """Canonical byte encoding (sorted-key compact JSON)."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        decoder = d.get("decoder")
        return cls(
            stem=tuple(ConvSpec(**c) for c in d["stem"]),
            sections=tuple(SectionSpec(**s) for s in d["sections"]),
            input_shape=tuple(d["input_shape"]),
            class_count=d.get("class_count"),
            decoder=None if decoder is None else DecoderSpec(
                stages=tuple(decoder["stages"]), out_channels=decoder["out_channels"],
                scales=tuple(decoder.get("scales", ()))),
        )

    @classmethod
    def decode(cls, raw: bytes) -> "NetworkSpec":
        return cls.from_dict(json.loads(raw.decode("utf-8")))


def resnet_spec(blocks: Sequence[int], channels: Sequence[int] = (16, 32, 64),
                cardinality: int | Sequence[int] = 1, input_shape=(3, 16, 16),
                class_count: int = 10) -> NetworkSpec:
    """CIFAR-style residual network; ``blocks=[3, 3, 3]`` is the 20-layer variant.

    The first section keeps the stem resolution and every later section halves it.
    """
    if len(blocks) != len(channels):
        raise ConfigurationError("blocks and channels must have the same length")
    cards = [cardinality] * len(blocks) if isinstance(cardinality, int) else list(cardinality)
    sections = tuple(
        SectionSpec(residual_blocks=n, channels=c, downsample=1 if i == 0 else 2, cardinality=g)
        for i, (n, c, g) in enumerate(zip(blocks, channels, cards)))
    return NetworkSpec(stem=(ConvSpec(channels[0], 3, 1),), sections=sections,
                       input_shape=tuple(input_shape), class_count=class_count).validate()


def generator_spec(residual_blocks: int = 6, widths: Sequence[int] = (8, 16, 32),
                   input_shape=(3, 16, 16), downsamples: int = 1) -> NetworkSpec:
    """Encoder / residual / decoder image-to-image network.

    The stem has three convs, the last ``downsamples`` of which use stride 2;
    one section holds all residual blocks and the decoder mirrors the stem.
    Six blocks give 18 weighted layers, two give 10.
    """
    if downsamples not in (0, 1, 2):
        raise ConfigurationError(f"downsamples must be 0, 1 or 2, got {downsamples}")
    a, b, c = widths
    strides = (1, 2 if downsamples >= 2 else 1, 2 if downsamples >= 1 else 1)
    stem = tuple(ConvSpec(w, 3, st) for w, st in zip((a, b, c), strides))
    return NetworkSpec(
        stem=stem,
        sections=(SectionSpec(residual_blocks=residual_blocks, channels=c, downsample=1),),
        input_shape=tuple(input_shape),
        decoder=DecoderSpec(stages=(b, a), out_channels=input_shape[0],
                            scales=(strides[2], strides[1])),
    ).validate()


PRESETS = {
    "resnet20": lambda **kw: resnet_spec([3, 3, 3], **kw),
    "resnet32": lambda **kw: resnet_spec([5, 5, 5], **kw),
    "resnet44": lambda **kw: resnet_spec([7, 7, 7], **kw),
    "resnet56": lambda **kw: resnet_spec([9, 9, 9], **kw),
    "resnet110": lambda **kw: resnet_spec([18, 18, 18], **kw),
    "generator6": lambda **kw: generator_spec(6, **kw),
    "generator2": lambda **kw: generator_spec(2, **kw),
}
