# # Compressing an image-to-image generator
#
# With beta = 0 only the intermediate loss is used, so no labels are
# needed. The student keeps the teacher's encoder and decoder fixed and
# learns two residual blocks that stand in for the teacher's six.

from litdistill.data import translation_splits
from litdistill.losses import DistillConfig
from litdistill.netgraph import generator_spec
from litdistill.trainer import TrainConfig, train

data = translation_splits(seed=0, train=400, val=100, test=200)
cfg = TrainConfig(epochs=10, milestones=(5, 7), lr0=0.05, batch_size=8, distill=DistillConfig(beta=0.0))

teacher, t = train("scratch", None, generator_spec(6), data, cfg)
student, lit = train("lit", teacher, generator_spec(2), data, cfg.with_(freeze_copied=True))
_, scratch = train("scratch", None, generator_spec(2), data, cfg)

print("copied layers:", lit.notes["copied"])
print(f"parameters: teacher {teacher.parameter_count()}, student {student.parameter_count()}")
print(f"mean per-pixel test error: teacher {t.final_test:.4f}, LIT student {lit.final_test:.4f}, "
      f"scratch student {scratch.final_test:.4f}")
