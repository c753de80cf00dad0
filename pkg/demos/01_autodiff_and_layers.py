"""
Reverse-mode autodiff and the generator building blocks
=======================================================

Build a small graph by hand, check one gradient against central
differences, then push a random segment through a tiny generator.
"""

import numpy as np

from evcgan import layers as L
from evcgan import tensor as T
from evcgan.models import GeneratorConfig, count_parameters, generator_forward, init_generator
from evcgan.tensor import Tensor

rng = np.random.default_rng(0)

# A gated convolution followed by instance norm, reduced to a scalar.
x = Tensor(rng.standard_normal((1, 3, 12)))
k_a = Tensor(rng.standard_normal((4, 3, 5)) * 0.3, requires_grad=True)
k_g = Tensor(rng.standard_normal((4, 3, 5)) * 0.3, requires_grad=True)


def loss_fn(ka, kg):
    h = L.glu_gate(L.conv1d(x, ka), L.conv1d(x, kg))
    h = L.instance_norm(h, Tensor(np.ones(4)), Tensor(np.zeros(4)))
    return T.tabs(h).mean()


loss = loss_fn(k_a, k_g)
T.backward(loss)
print("loss", loss.item())

# central difference on a single kernel entry
h = 1e-6
idx = (2, 1, 3)
plus, minus = k_a.data.copy(), k_a.data.copy()
plus[idx] += h
minus[idx] -= h
numeric = (loss_fn(Tensor(plus), k_g).item() - loss_fn(Tensor(minus), k_g).item()) / (2 * h)
print(f"d loss / d k_a{idx}: backward {k_a.grad[idx]:.8f}  numeric {numeric:.8f}")

# Adam with beta1 = 0.5 on the two kernels
from evcgan.optim import adam_step  # noqa: E402

params = {"k_a": k_a.data, "k_g": k_g.data}
grads = {"k_a": k_a.grad, "k_g": k_g.grad}
new, state = adam_step(params, grads, 2e-4, 0.5, 0.999, 1e-8, None)
print("max |update|", max(float(np.abs(new[n] - params[n]).max()) for n in params))

# A tiny generator: gated convs, residual blocks with a transformer layer each.
cfg = GeneratorConfig(in_channels=10, channels=16, hidden=32, heads=2, kernel=5, post_kernel=5,
                      gated_repeat=1, residual_repeat=1).validate()
gp = init_generator(cfg, seed=0)
seg = Tensor(rng.standard_normal((2, 10, 100)).astype(np.float32))
with T.no_grad():
    out = generator_forward(gp, cfg, seg)
print("generator parameters", count_parameters(gp), "output shape", out.shape)
