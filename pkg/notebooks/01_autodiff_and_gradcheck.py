"""
Reverse-mode autodiff and finite-difference checks
==================================================

Every operation in the package records how to push a gradient back to its
inputs. This walk-through builds a small graph by hand, runs backward, and
compares the result with central differences.
"""

import numpy as np

from swin_tuna import tensor as T
from swin_tuna.gradcheck import check, numerical_grad, run_gradcheck
from swin_tuna.tensor import Tensor

rng = np.random.default_rng(0)

# A depthwise 3x3 convolution followed by GeLU, summed to a scalar.
x = Tensor(rng.standard_normal((1, 2, 5, 5)), requires_grad=True)
w = Tensor(rng.standard_normal((2, 1, 3, 3)), requires_grad=True)
b = Tensor(np.zeros(2), requires_grad=True)
loss = T.gelu(T.conv2d_depthwise(x, w, b)).sum()
loss.backward()
print("loss", loss.item())
print("d loss / d w, channel 0\n", w.grad[0, 0])

# The same gradient from central differences on a fresh graph.
fn = lambda xx, ww, bb: T.tsum(T.gelu(T.conv2d_depthwise(xx, ww, bb)))
fd = numerical_grad(fn, [x.data.copy(), w.data.copy(), b.data.copy()], 1)
print("max |autodiff - finite diff|", np.abs(fd - w.grad).max())

# check() wraps that comparison and returns a norm-based relative error.
print("relative error", check(fn, [x.data, w.data, b.data]))

# The registered suite covers every primitive and the composed model paths.
for result in run_gradcheck(["layer_norm", "window_attention", "tuna_forward"]):
    print(result.line())
