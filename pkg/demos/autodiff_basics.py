"""
Reverse-mode differentiation on numpy arrays
============================================

Every layer in this package is built from the same Tensor type: a numpy
array plus a closure that knows how to push gradients back to its inputs.
This walks through the moving parts on a problem small enough to check by
hand.
"""

import numpy as np

from weedmtl import ops
from weedmtl.tensor import Tensor, no_grad

# A scalar chain first: y = sum((x * 3 + 1)^2). dy/dx = 6*(3x + 1).
x = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
y = ((x * 3.0 + 1.0) ** 2).sum()
y.backward()
print("analytic   ", 6.0 * (3.0 * x.data + 1.0))
print("from tape  ", x.grad)

# Fan-out accumulates: z = x*x + x uses x twice, so both paths add up.
x = Tensor(np.array([2.0]), requires_grad=True)
z = x * x + x
z.backward(np.ones(1))
print("d(x^2+x)/dx at 2 ->", x.grad, "(expect 5)")

# The same machinery drives real layers. A convolution followed by a
# softmax cross-entropy gives gradients for the kernel in one call.
rng = np.random.default_rng(0)
image = Tensor(rng.standard_normal((1, 3, 8, 8)), requires_grad=False)
kernel = Tensor(rng.standard_normal((4, 3, 3, 3)) * 0.1, requires_grad=True)
logits = ops.conv2d(image, kernel, stride=1, padding=1)
labels = rng.integers(0, 4, size=(1, 8, 8))
loss = ops.softmax_cross_entropy(logits, labels)
loss.backward()
print("conv kernel grad shape", kernel.grad.shape)

# Spot-check one coordinate against a central finite difference.
eps = 1e-5
probe = (0, 0, 1, 1)
for sign in (+1, -1):
    kernel.data[probe] += sign * eps
    with no_grad():
        out = ops.softmax_cross_entropy(
            ops.conv2d(image, kernel, stride=1, padding=1), labels)
    if sign > 0:
        hi = float(out.data)
    else:
        lo = float(out.data)
    kernel.data[probe] -= sign * eps
numeric = (hi - lo) / (2 * eps)
print(f"analytic {kernel.grad[probe]:.8f}  numeric {numeric:.8f}")

# Inference skips the bookkeeping entirely.
with no_grad():
    silent = ops.conv2d(image, kernel, stride=1, padding=1)
print("under no_grad the result records no parents:", silent._parents == ())
