# IVON on a 1-d quadratic: the posterior settles at mu* = a c / (a + delta), sigma* = 1/sqrt(lambda (a + delta))
import numpy as np

from snrlora.ivon import GaussianState, ivon_step, posterior_sigma
from snrlora.numerics import Rng

a, c, delta, lam = 2.0, 1.0, 0.1, 100.0
state = GaussianState.create(np.zeros(1), lam, hess_init=1.0, delta=delta, lr=0.02, beta2_h=0.999)
rng = Rng(0)
steps = 5000
for t in range(steps):
    state.lr = 0.02 * (1 - t / steps) + 1e-12
    noise = posterior_sigma(state) * rng.normal((64, 1))  # 64 averaged draws per step
    ivon_step(state, a * (state.mu + noise - c), noise)
    if t % 1000 == 0:
        print(t, state.mu[0], state.h[0])

print("mu", state.mu[0], "expected", a * c / (a + delta))
print("sigma", posterior_sigma(state)[0], "expected", 1 / np.sqrt(lam * (a + delta)))
