# # Training a compressed student three ways
#
# A 20-layer teacher is trained on the synthetic texture task, then an
# 8-layer student is trained from scratch, with KD and with LIT. The
# default settings take a few minutes on one core; pass a larger scale on
# the command line for longer schedules.

import sys
import time

from litdistill.data import classification_splits
from litdistill.netgraph import resnet_spec
from litdistill.trainer import preset, train

scale = float(sys.argv[1]) if len(sys.argv) > 1 else 0.05
seed = 0
channels = (8, 16, 32)

# ## Data
#
# Each image tiles four textured quadrants; the class depends on the
# arrangement, so recognising it needs several stages of processing.

data = classification_splits(seed=seed, train=2000, val=300, test=1000)
print("splits", len(data.train), len(data.val), len(data.test))

# ## Teacher

start = time.perf_counter()
teacher, report = train("scratch", None, resnet_spec([3, 3, 3], channels), data,
                        preset("scratch", 1.5 * scale, lr0=0.05, seed=seed))
print(f"teacher test accuracy {report.final_test:.3f} ({time.perf_counter() - start:.0f}s)")

# ## Students
#
# LIT copies the stem and head, trains each section on the teacher's
# intermediate outputs, then fine-tunes end to end with KD.

for variant in ("scratch", "kd", "lit"):
    start = time.perf_counter()
    _, r = train(variant, None if variant == "scratch" else teacher, resnet_spec([1, 1, 1], channels),
                 data, preset(variant, scale, seed=seed))
    phases = sorted({row.phase for row in r.rows})
    print(f"{variant:8s} test {r.final_test:.3f}  epochs {len(r.rows)} {phases} "
          f"({time.perf_counter() - start:.0f}s)")
