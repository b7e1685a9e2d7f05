"""Central finite-difference gradient checking in double precision."""

import numpy as np

from litdistill.autodiff import Tensor, backward

EPS = 1e-4
RTOL = 1e-4


def numeric_grad(fn, arrays, which, eps=EPS):
    """d fn(*arrays) / d arrays[which] by central differences; fn returns a float."""
    base = arrays[which]
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        saved = base[i]
        base[i] = saved + eps
        up = fn(*arrays)
        base[i] = saved - eps
        down = fn(*arrays)
        base[i] = saved
        grad[i] = (up - down) / (2 * eps)
    return grad


def relative_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_op(op, arrays, rng, attrs=None, upstream=True):
    """Compare analytic and numeric gradients of sum(op(*inputs) * G) for every input.

    Returns the worst relative error across inputs.
    """
    attrs = attrs or {}
    out_shape = op(*[Tensor(a, dtype=np.float64) for a in arrays], **attrs).shape
    weights = rng.normal(size=out_shape) if upstream else np.ones(out_shape)

    def scalar(*arrs):
        out = op(*[Tensor(a, dtype=np.float64) for a in arrs], **attrs)
        return float(np.sum(out.data * weights))

    tensors = [Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
    out = op(*tensors, **attrs)
    from litdistill.autodiff import ops
    loss = ops.sum(ops.mul(out, Tensor(weights, dtype=np.float64)))
    backward(loss)
    worst = 0.0
    for i, t in enumerate(tensors):
        num = numeric_grad(scalar, [a.copy() for a in arrays], i)
        worst = max(worst, relative_error(num, t.grad))
    return worst


def check_scalar_fn(fn, params):
    """fn() builds a scalar loss from the Parameters ``params`` (double precision).

    Returns the worst relative error over all parameters.
    """
    for p in params:
        p.grad = None
    grads = backward(fn(), params)
    worst = 0.0
    for p in params:
        num = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        nflat = num.reshape(-1)
        for j in range(flat.size):
            saved = flat[j]
            flat[j] = saved + EPS
            up = float(fn().data)
            flat[j] = saved - EPS
            down = float(fn().data)
            flat[j] = saved
            nflat[j] = (up - down) / (2 * EPS)
        worst = max(worst, relative_error(num, grads[p.name]))
    return worst
