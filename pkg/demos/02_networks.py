# # Segmented networks, pairing and checkpoints
#
# A network is a stem, a list of sections split at the downsampling
# boundaries, and a head. Teacher and student pair up when their
# intermediate outputs have the same shape at every boundary.

import os
import tempfile

import numpy as np

from litdistill.autodiff import Tensor
from litdistill.netgraph import (
    PairingError,
    build_network,
    copy_layers,
    forward_collect,
    generator_spec,
    load_network,
    resnet_spec,
    save_network,
    validate_pairing,
)

# ## Depth bookkeeping
#
# Three sections of n residual blocks give 6n + 2 weighted layers.

for n in (1, 3, 5, 18):
    spec = resnet_spec([n] * 3)
    print(f"blocks {n:2d}: {spec.weighted_layer_count():3d} layers, "
          f"{build_network(spec).parameter_count():7d} parameters")

teacher = build_network(resnet_spec([3, 3, 3]), seed=0)
student = build_network(resnet_spec([1, 1, 1]), seed=1)

# ## Intermediate outputs at the split points

x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 16, 16)))
logits, irs = forward_collect(teacher, x)
print("logits", logits.shape, "IR shapes", [ir.shape for ir in irs])

# ## Pairing
#
# The plan lists the split shapes and the layers that can be copied
# verbatim from teacher to student.

plan = validate_pairing(teacher.spec, student.spec)
print("splits", plan.k, "copy list", plan.copy_list)
copy_layers(teacher, student, plan)
same = np.array_equal(teacher.parameters["stem.0.conv.weight"].data,
                      student.parameters["stem.0.conv.weight"].data)
print("stem copied:", same)

try:
    validate_pairing(teacher.spec, resnet_spec([1, 1, 1], channels=(16, 24, 64)))
except PairingError as exc:
    print("width mismatch:", exc)

# ## Grouped convolutions and generators
#
# Cardinality changes the first conv of each block but keeps IR shapes,
# so a 32-group teacher pairs with a 16-group student.

wide = resnet_spec([2, 2, 2], channels=(64, 64, 64), cardinality=32)
narrow = resnet_spec([1, 1, 1], channels=(64, 64, 64), cardinality=16)
print("grouped pairing ok, splits:", validate_pairing(wide, narrow).k)
gen = generator_spec(6)
print("generator layers", gen.weighted_layer_count(), "copy list",
      validate_pairing(gen, generator_spec(2)).copy_list)

# ## Checkpoints round-trip bit for bit

with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "teacher.litm")
    save_network(teacher, path)
    again = load_network(path)
    print("checkpoint bytes", os.path.getsize(path), "identical state:",
          again.snapshot() == teacher.snapshot())
