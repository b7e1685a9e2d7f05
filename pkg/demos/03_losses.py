# # Distillation losses
#
# KD mixes the hard-label cross-entropy with a cross-entropy against the
# teacher's softened distribution. The intermediate loss trains each student
# section on the teacher's previous intermediate output, so a section's
# gradient only comes from its own term. LIT interpolates the two.

import numpy as np

from litdistill.autodiff import Tensor, backward
from litdistill.losses import DistillConfig, ir_loss, ir_terms, kd_loss, lit_loss, softened_distribution
from litdistill.netgraph import build_network, resnet_spec

rng = np.random.default_rng(0)

# ## Softening with temperature

z = Tensor([[3.0, 1.0, -1.0]])
for tau in (1, 2, 6):
    print(f"tau {tau}:", np.round(softened_distribution(z, tau).data, 3))

# ## KD on fixed logits

student_logits = Tensor([[1.0, 2.0, 0.0], [0.0, -1.0, 3.0]])
teacher_logits = Tensor([[2.0, 0.0, 1.0], [1.0, 1.0, 1.0]])
labels = np.array([1, 2])
for alpha in (1.0, 0.95, 0.5, 0.0):
    print(f"alpha {alpha}: KD {kd_loss(student_logits, teacher_logits, labels, alpha, 6.0).item():.4f}")

# ## Intermediate loss on a teacher/student pair

teacher = build_network(resnet_spec([3, 3, 3], channels=(8, 16, 32)), seed=0)
student = build_network(resnet_spec([1, 1, 1], channels=(8, 16, 32)), seed=1)
x = Tensor(rng.normal(size=(4, 3, 16, 16)))
y = rng.integers(0, 10, size=4)
terms = ir_terms(teacher, student, x)
print("per-split terms", [round(t.item(), 4) for t in terms], "total", round(ir_loss(teacher, student, x).item(), 4))

# ## Block isolation
#
# The gradient reaching section 2 is the gradient of term 2 alone.

params = list(student.parameters.values())
full = backward(ir_loss(teacher, student, x), params)
only = backward(ir_terms(teacher, student, x)[1], params)
name = "section2.block0.conv1.weight"
print("section 2 gradient difference", float(np.max(np.abs(full[name] - only[name]))))

# ## The interpolation
#
# beta = 1 is exactly KD and beta = 0 exactly the intermediate loss.

for beta in (0.0, 0.25, 0.75, 1.0):
    cfg = DistillConfig(tau=6.0, alpha=0.95, beta=beta)
    print(f"beta {beta}: LIT {lit_loss(teacher, student, x, y, cfg).item():.4f}")
