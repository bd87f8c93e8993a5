# SVD-style adapter: W = W0 + P diag(lambda * mask) Q, and what masking does
import numpy as np

from snrlora.adapter import AdapterLayer, backward, forward, orthogonality_penalty, set_mask
from snrlora.numerics import Rng

rng = Rng(0)
w0 = rng.normal((6, 4))
layer = AdapterLayer.init(w0, rank=3, rng=rng, init_scale=0.5)
layer.lam = np.array([2.0, 0.5, -1.0])  # init leaves lambda at 0; give it something to show
x = rng.normal((5, 6))

y = forward(layer, x)
print("output shape", y.shape)
print("orthogonality penalty", orthogonality_penalty(layer))

# prune the middle triplet, then bring it back
set_mask(layer, [True, False, True])
print("active rank after masking", layer.active_rank)
print("masked output differs:", not np.array_equal(forward(layer, x), y))
set_mask(layer, [True, True, True])
print("restored output bit-identical:", np.array_equal(forward(layer, x), y))

g = backward(layer, x, np.ones_like(y))
print("g_lambda", g.g_lambda)
