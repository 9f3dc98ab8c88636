# %% [markdown]
# # Layers and their gradients
#
# Every layer is a pair of numpy functions: a forward pass and a backward pass
# that maps an upstream gradient to input and parameter gradients. This script
# walks through the convolution, checks it by hand, then lets finite
# differences confirm the backward passes.

# %%
import numpy as np

from elseg import tensor as T

# %% [markdown]
# A 3x3 all-ones kernel over a 3x3 all-ones image with one pixel of zero
# padding counts how many in-bounds neighbours each pixel has.

# %%
x = np.ones((1, 1, 3, 3), np.float32)
k = np.ones((1, 1, 3, 3), np.float32)
print(T.conv2d(x, k, np.zeros(1, np.float32), stride=1, padding=1)[0, 0])

# %% [markdown]
# Max pooling keeps the argmax of every 2x2 window so the backward pass can
# route the gradient to exactly one input pixel.

# %%
out, idx = T.maxpool2d(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
print("pooled", out.ravel(), "argmax", idx.ravel())
print(T.maxpool2d_backward(idx, np.array([[[[5.0]]]])).input_grad[0, 0])

# %% [markdown]
# The 2x2 stride-2 transposed convolution paints a scaled copy of the kernel
# for every input pixel.

# %%
v = np.full((1, 1, 1, 1), 2.0)
kt = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
print(T.conv_transpose2d(v, kt)[0, 0])

# %% [markdown]
# ## Finite-difference check
#
# `finite_difference_check` perturbs each entry by +/- epsilon and compares
# the central difference with the analytic gradient. Inputs are checked by
# passing them alongside the parameters. Kernels keep float64 when given
# float64, which keeps rounding noise far below the tolerance.

# %%
rng = np.random.default_rng(0)
params = {"x": rng.standard_normal((1, 2, 5, 5)),
          "w": rng.standard_normal((3, 2, 3, 3)),
          "b": rng.standard_normal(3)}
readout = rng.standard_normal((1, 3, 5, 5))


def loss_and_grads(p):
    y = T.conv2d(p["x"], p["w"], p["b"], 1, 1)
    g = T.conv2d_backward(p["x"], p["w"], 1, 1, readout)
    return float(np.sum(y * readout)), {"x": g.input_grad, "w": g.param_grads["weight"],
                                        "b": g.param_grads["bias"]}


print(T.finite_difference_check(loss_and_grads, params, epsilon=1e-3, tolerance=1e-3, floor=1e-6))

# %% [markdown]
# A gradient that is off by 10% is caught.

# %%
def broken(p):
    loss, grads = loss_and_grads(p)
    grads["w"] = grads["w"] * 1.1
    return loss, grads


print(T.finite_difference_check(broken, params, floor=1e-6))

# %% [markdown]
# ## Whole network
#
# The same checker runs on the full U-Net. A ReLU network is only piecewise
# smooth, so the step must be much smaller than the distance to the nearest
# kink; float64 with epsilon 1e-6 does that.

# %%
from elseg import unet as U

cfg = U.UNetConfig(in_channels=1, out_channels=2, depth=2, base_width=4, input_size=16)
model = U.build_unet(cfg, seed=0)
p64 = {k: v.astype(np.float64) for k, v in model.params.items()}
p64["__input__"] = rng.standard_normal((1, 1, 16, 16))
targets = (rng.random((1, 2, 16, 16)) > 0.5).astype(np.float64)
pick = {k: rng.choice(v.size, size=1) for k, v in p64.items()}


def net_loss(p):
    m = U.UNetModel(cfg, {k: v for k, v in p.items() if k != "__input__"})
    return U.loss_and_grads(m, p["__input__"], targets)


report = T.finite_difference_check(net_loss, p64, epsilon=1e-6, tolerance=2e-3, indices=pick, floor=1e-6)
print("passed:", report.passed, "worst:", max(report.max_rel_error.values()))
