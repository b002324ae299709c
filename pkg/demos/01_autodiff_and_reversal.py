# %% [markdown]
# # Autodiff and the gradient-reversal layer
#
# `gface.numcore` is a small reverse-mode autodiff over numpy arrays.  This
# walk-through builds a scalar, backpropagates, checks it against central
# differences and then shows what the reversal layer does to a gradient.

# %%
from __future__ import annotations

import numpy as np

from gface import numcore as nc

x = nc.Tensor(np.array([1.0, 2.0]), requires_grad=True, name="x")
y = nc.sq_norm(x)
grads = nc.backward(y)
print("d|x|^2/dx =", grads[x])  # 2x

# %% [markdown]
# Any scalar function of named arrays can be checked numerically.

# %%
rng = np.random.default_rng(0)
W = rng.normal(size=(3, 4))
labels = np.array([0, 3, 1, 2, 2])
feats = rng.normal(size=(5, 3))


def objective(p):
    return nc.cross_entropy(nc.softmax(nc.matmul(feats, p["W"]), tau=0.5), labels)


report = nc.finite_diff_check(objective, {"W": W})
print(report)

# %% [markdown]
# The reversal layer is the identity going forward and multiplies the
# incoming gradient by `-mu` going backward.

# %%
z = nc.Tensor(np.array([3.0, -1.5]), requires_grad=True)
r = nc.grad_reverse(z, mu=0.5)
print("forward:", r.data)
print("backward:", nc.backward(nc.tsum(r))[z])
