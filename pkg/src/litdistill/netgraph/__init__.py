"""Block-structured networks, split points and teacher-to-student copying."""

from .checkpoint import FormatError, load_network, read_container, save_network, write_container
from .network import SegmentedNetwork, build_network, forward_collect
from .pairing import CopyError, PairingError, PairingPlan, SplitSpec, copy_layers, full_copy_plan, validate_pairing
from .spec import PRESETS, ConvSpec, DecoderSpec, NetworkSpec, SectionSpec, generator_spec, resnet_spec

__all__ = [
    "FormatError", "load_network", "read_container", "save_network", "write_container",
    "SegmentedNetwork", "build_network", "forward_collect",
    "CopyError", "PairingError", "PairingPlan", "SplitSpec", "copy_layers", "full_copy_plan",
    "validate_pairing",
    "PRESETS", "ConvSpec", "DecoderSpec", "NetworkSpec", "SectionSpec", "generator_spec",
    "resnet_spec",
]
