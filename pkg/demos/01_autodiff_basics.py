"""
Reverse-mode autodiff on dense arrays
=====================================

Every model in this package is built from one Tensor type: a float64
array plus a closure tape. Calling ``backward()`` on a scalar walks the
tape in reverse and accumulates gradients on the leaves.
"""

import numpy as np

from xing import tensor as tz
from xing.tensor import Tensor

# --- build a small expression ------------------------------------------------
rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)

y = tz.tanh(x @ w)           # matmul and elementwise ops compose freely
loss = tz.tmean(y * y)
loss.backward()

print("loss          :", float(loss.data))
print("dloss/dx shape:", x.grad.shape)
print("dloss/dw shape:", w.grad.shape)

# --- gradients are exact, not approximate ------------------------------------
# grad_check compares the tape gradient against central finite differences
# and returns the worst relative error over all coordinates.
def scalar_fn(t):
    out = tz.tanh(t @ w.data)
    return tz.tmean(out * out)

err = tz.grad_check(scalar_fn, x)
print("finite-difference relative error:", f"{err:.2e}")
assert err < 1e-6

# --- the same machinery drives convolutions ----------------------------------
img = Tensor(rng.normal(size=(1, 3, 8, 8)))
kern = Tensor(rng.normal(size=(5, 3, 3, 3)) * 0.1, requires_grad=True)
bias = Tensor(np.zeros(5))
feat = tz.conv2d(img, kern, bias, stride=2, pad=1)
print("conv2d 8x8 stride 2 ->", feat.shape)

tz.tsum(feat).backward()
print("kernel gradient magnitude:", float(np.abs(kern.grad).mean()))
