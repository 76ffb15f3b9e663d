"""Check the hand-written backward passes against finite differences.

Every differentiable operation records a vector-Jacobian product on the
tape. Central differences with a 1e-5 step give an independent estimate.
"""

import numpy as np

from swinoir import autodiff as ad
from swinoir.autodiff import Tensor
from swinoir.model import ModelConfig, forward, init_model, loss_l1

rng = np.random.default_rng(0)

x = Tensor(rng.uniform(-1, 1, (3, 5)), requires_grad=True)
g = Tensor(rng.uniform(-1, 1, 5), requires_grad=True)
b = Tensor(rng.uniform(-1, 1, 5), requires_grad=True)
weights = rng.uniform(-1, 1, (3, 5))

checks = {
    "softmax": (lambda a: (ad.softmax_lastdim(a) * weights).sum(), [x]),
    "gelu": (lambda a: (ad.gelu(a) * weights).sum(), [x]),
    "layer_norm": (lambda a, gg, bb: (ad.layer_norm(a, gg, bb) * weights).sum(), [x, g, b]),
}
for name, (fn, inputs) in checks.items():
    print(f"{name:<11} max relative error {ad.gradcheck(fn, inputs):.2e}")

# the whole network: two blocks, one layer each, four channels
cfg = ModelConfig(blocks=2, stls_per_block=1, channels=4, window_size=2, heads=2, upscale=2)
model = init_model(cfg, seed=0)
image, target = rng.random((4, 4, 3)), rng.random((8, 8, 3))
err = ad.gradcheck(lambda *_: loss_l1(forward(model, image), target), model.parameters())
print(f"end-to-end over {model.parameter_count()} parameters: {err:.2e}")
