# # Reverse-mode autodiff on numpy
#
# The engine records every primitive applied to a tensor that needs a
# gradient, then walks the tape backwards. This script builds a tiny
# convolutional model by hand, checks one gradient against central
# differences and shows the precision switch.

import numpy as np

from litdistill.autodiff import Parameter, Tensor, backward, no_grad, ops, precision

rng = np.random.default_rng(0)

# ## A scalar loss through conv, batch norm and pooling
#
# Tensors default to float32. Parameters always need a gradient.

x = Tensor(rng.normal(size=(4, 3, 8, 8)))
w = Parameter(rng.normal(0, 0.3, size=(6, 3, 3, 3)), "conv.weight")
gamma = Parameter(np.ones(6), "bn.weight")
beta = Parameter(np.zeros(6), "bn.bias")
running_mean, running_var = np.zeros(6, np.float32), np.ones(6, np.float32)

h = ops.conv2d(x, w, padding=1)
h = ops.relu(ops.batch_norm(h, gamma, beta, running_mean, running_var, training=True))
loss = ops.mean(ops.square(ops.global_avg_pool(h)))
grads = backward(loss, [w, gamma, beta])
print("loss", loss.item())
print("gradient shapes", {k: v.shape for k, v in grads.items()})
print("running mean after one batch", np.round(running_mean, 3))

# ## Checking one entry by finite differences
#
# Double precision keeps the central difference honest at eps = 1e-4.

with precision("double"):
    w64 = Parameter(w.data.astype(np.float64), "w")
    x64 = Tensor(x.data.astype(np.float64))

    def f():
        return ops.mean(ops.square(ops.conv2d(x64, w64, padding=1)))

    analytic = backward(f(), [w64])["w"][2, 1, 0, 2]
    eps = 1e-4
    w64.data[2, 1, 0, 2] += eps
    up = f().item()
    w64.data[2, 1, 0, 2] -= 2 * eps
    down = f().item()
    w64.data[2, 1, 0, 2] += eps
    print("analytic", analytic, "numeric", (up - down) / (2 * eps))

# ## Inference without a tape
#
# Inside no_grad nothing is recorded, so memory stays flat during evaluation.

with no_grad():
    y = ops.relu(ops.conv2d(x, w, padding=1))
print("requires grad inside no_grad:", y.requires_grad)
