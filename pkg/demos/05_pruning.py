# # Magnitude pruning
#
# Pruning zeroes the smallest weights and attaches masks so fine-tuning
# cannot bring them back. Sparsity 0 leaves the model untouched.

import numpy as np

from litdistill.data import classification_splits
from litdistill.netgraph import resnet_spec
from litdistill.trainer import (PruneSpec, TrainConfig, achieved_sparsity, evaluate, fine_tune, magnitude_prune,
                                preset, prunable, train)

data = classification_splits(seed=1, train=2000, val=200, test=500)
net, report = train("scratch", None, resnet_spec([1, 1, 1], (8, 16, 32)), data,
                    preset("scratch", 0.05))
print(f"dense test accuracy {report.final_test:.3f}")

tune = TrainConfig(epochs=2, milestones=(), fine_tune_lr0=0.01)
for sparsity in (0.0, 0.5, 0.8, 0.95):
    for scope in ("per-tensor", "global"):
        pruned = net.clone()
        magnitude_prune(pruned, PruneSpec(sparsity, scope))
        before = evaluate(pruned, data.test)
        fine_tune(pruned, data, tune, 2)
        after = evaluate(pruned, data.test)
        intact = all(not np.any(p.data[p.prune_mask == 0]) for p in prunable(pruned) if p.prune_mask is not None)
        print(f"{scope:10s} sparsity {achieved_sparsity(pruned):.3f}: test {before:.3f} "
              f"-> {after:.3f} after fine-tuning, masked weights still zero: {intact}")
