"""Poke at the autodiff core: tape, adjoints, finite-difference agreement.

Everything the denoiser trains with reduces to the primitives shown here.
"""

import numpy as np

import hsifusion.autodiff as ad
from hsifusion.autodiff import Tensor, backward
from hsifusion import ops

ad.set_default_dtype(np.float64)
rng = np.random.default_rng(3)

# a small composed pipeline: conv -> group norm -> attention -> scalar loss
x = Tensor(rng.normal(size=(2, 6, 6)), requires_grad=True)
kernel = Tensor(rng.normal(size=(4, 2, 3, 3)) * 0.5, requires_grad=True)
gamma = Tensor(np.ones(4), requires_grad=True)
beta = Tensor(np.zeros(4), requires_grad=True)
mats = [Tensor(rng.normal(size=(4, 4)) * 0.4, requires_grad=True) for _ in range(4)]


def loss_fn():
    h = ops.conv2d(x, kernel, padding=1)
    h = ops.group_norm(h, 2, gamma, beta)
    h = ops.self_attention(h, *mats)
    return ad.mean_all(ad.mul(h, h))


loss = loss_fn()
backward(loss)
print(f"pipeline loss: {loss.item():.6f}")
print(f"grad norms: x {np.linalg.norm(x.grad):.4f}, kernel {np.linalg.norm(kernel.grad):.4f}")

# central finite differences on a few kernel entries
h_step = 1e-5
print("\nanalytic vs finite-difference gradients (kernel entries):")
for _ in range(4):
    idx = tuple(int(rng.integers(0, s)) for s in kernel.shape)
    orig = kernel.data[idx]
    kernel.data[idx] = orig + h_step
    lp = loss_fn().item()
    kernel.data[idx] = orig - h_step
    lm = loss_fn().item()
    kernel.data[idx] = orig
    fd = (lp - lm) / (2 * h_step)
    print(f"  {str(idx):14s} analytic {kernel.grad[idx]:+.8f}  fd {fd:+.8f}")

# gradients accumulate until cleared
x.zero_grad()
backward(loss_fn())
g1 = np.linalg.norm(x.grad)
backward(loss_fn())
print(f"\naccumulation: one pass {g1:.5f}, two passes {np.linalg.norm(x.grad):.5f}")

ad.set_default_dtype(np.float32)
