"""A short tour of the tensor core: tape, gradients, and the second-order path.

Run: python demos/01_autodiff_tour.py
"""
import numpy as np

from longscape import core as C

rng = np.random.default_rng(0)

# Operations record onto a tape only inside `with C.Tape()`.
x = C.Tensor(rng.standard_normal((1, 2, 6, 6)), requires_grad=True)
w = C.Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
with C.Tape():
    y = C.leaky_relu(C.conv2d(x, w, stride=2, padding=1), 0.2)
    loss = C.sum(C.mul(y, y))
gx, gw = C.grad(loss, [x, w])
print("conv output", y.shape, "| dL/dx", gx.shape, "| dL/dw", gw.shape)

# A quick central-difference spot check on one weight.
h = 1e-6
w0 = w.data[0, 0, 1, 1]
def value():
    return float(C.sum(C.square(C.leaky_relu(C.conv2d(C.Tensor(x.data), C.Tensor(w.data), stride=2, padding=1), 0.2))).data)
w.data[0, 0, 1, 1] = w0 + h; up = value()
w.data[0, 0, 1, 1] = w0 - h; down = value()
w.data[0, 0, 1, 1] = w0
print(f"tape {gw.data[0, 0, 1, 1]:.9f}   finite difference {(up - down) / (2 * h):.9f}")

# Gradient of a gradient norm, the quantity a Lipschitz penalty needs.
v = C.constant(rng.standard_normal((1, 3, 3, 3)))
with C.Tape():
    critic = lambda t: C.sum(C.mul(C.leaky_relu(C.conv2d(t, w, stride=2, padding=1), 0.2), v), axis=(1, 2, 3))
    norms = C.second_order_grad_norm(critic, C.Tensor(x.data, requires_grad=True))
    penalty = C.sum(C.square(norms - 1.0))
(gw2,) = C.grad(penalty, [w])
print("input-gradient norm", norms.data, "| penalty gradient wrt w has norm", np.linalg.norm(gw2.data).round(4))
