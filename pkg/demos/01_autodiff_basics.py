"""Reverse-mode autodiff in a few lines.

Builds a small expression, runs backward, compares against central
differences, then takes a handful of Adam steps on a least-squares fit.
"""

import numpy as np

from motionpred import autodiff as ad

rng = np.random.default_rng(0)

# A parameter store owns the trainable tensors.
store = ad.ParamStore()
w = store.add("w", rng.normal(size=(3, 2)))
b = store.add("b", np.zeros(2))

x = rng.normal(size=(16, 3))
y = x @ np.array([[1.0, -2.0], [0.5, 0.0], [0.0, 3.0]]) + np.array([0.1, -0.2])


def loss(_store):
    pred = ad.matmul(ad.Tensor(x), w) + b
    return ad.reduce("mean", ad.elementwise("square", pred - ad.Tensor(y)))


# Analytic vs numerical gradient.
errors = ad.grad_check(loss, store, h=1e-5)
print("relative gradient error per tensor:", {k: f"{v:.1e}" for k, v in errors.items()})

# Fit with Adam.
state = ad.AdamState.for_store(store, lr=0.05)
for step in range(301):
    value = loss(store)
    ad.backward(value, store)
    ad.adam_step(store, state)
    if step % 100 == 0:
        print(f"step {step:3d}  loss {value.item():.6f}")

print("recovered weights:\n", np.round(w.data, 3))
print("recovered bias:", np.round(b.data, 3))
