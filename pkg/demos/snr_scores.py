# posterior scores: |mu|/sigma against the folded-normal E|theta|/Std|theta|
import numpy as np

from snrlora.importance import SNR_ABS_AT_ZERO, magnitude, snr_abs, snr_mean
from snrlora.numerics import Rng

sigma = np.ones(6)
mu = np.array([0.0, 0.5, 1.0, 2.0, 5.0, 10.0])
print("mu/sigma   snr_mean  snr_abs")
for m, a, b in zip(mu, snr_mean(mu, sigma), snr_abs(mu, sigma)):
    print(f"{m:8.1f} {a:9.4f} {b:8.4f}")

# at mu = 0 the folded normal still has a positive mean, so snr_abs does not vanish
print("snr_abs at zero", SNR_ABS_AT_ZERO)

# Monte Carlo check at one point
z = Rng(1).normal(200_000)
a = np.abs(2.0 + z)
print("MC at mu/sigma=2:", a.mean() / a.std(), "closed form:", snr_abs(np.array([2.0]), np.array([1.0]))[0])

# both SNR scores are scale invariant; magnitude is not
print(snr_mean(3 * mu, 3 * sigma)[:3], magnitude(3 * mu)[:3])
