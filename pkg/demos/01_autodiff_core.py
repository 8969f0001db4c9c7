# %% [markdown]
# # A tape-based autodiff core on numpy
#
# Every tensor is NHWC. Operations record a backward closure, and
# `backward()` replays them in reverse topological order. This script builds
# a small expression, inspects its gradients, then checks them against central
# finite differences.

# %%
import numpy as np

from lssfnet import ops
from lssfnet.gradcheck import grad_error
from lssfnet.tensor import Tensor, no_grad

rng = np.random.default_rng(0)

# %% [markdown]
# A 3x3 convolution followed by ReLU and a mean. Use 64-bit storage when the
# goal is to compare against finite differences.

# %%
x = Tensor(rng.normal(size=(1, 6, 6, 2)), requires_grad=True, dtype=np.float64)
k = Tensor(rng.normal(size=(3, 3, 2, 4)), requires_grad=True, dtype=np.float64)
b = Tensor(np.zeros(4), requires_grad=True, dtype=np.float64)

y = ops.relu(ops.conv2d(x, k, b)).mean()
y.backward()
print("loss", y.item())
print("d loss / d bias", b.grad)

# %% [markdown]
# `grad_error` perturbs a sample of coordinates and reports, per tensor, the
# worst deviation relative to the largest gradient it saw.

# %%
errs = grad_error(lambda: ops.relu(ops.conv2d(x, k, b)).mean(), {"x": x, "k": k, "b": b})
for name, e in errs.items():
    print(f"{name}: relative error {e:.2e}")

# %% [markdown]
# Inside `no_grad()` nothing is recorded, which is how evaluation runs.

# %%
with no_grad():
    z = ops.sigmoid(ops.conv2d(x, k, b))
print("recorded parents under no_grad:", len(z._parents))

# %% [markdown]
# Max-pool routes the gradient to the first maximum of each window, and
# nearest upsampling is its adjoint on the sum.

# %%
t = Tensor(np.array([1.0, 3.0, 3.0, 2.0]).reshape(1, 2, 2, 1), requires_grad=True, dtype=np.float64)
ops.maxpool2(t).sum().backward()
print(t.grad.reshape(2, 2))
