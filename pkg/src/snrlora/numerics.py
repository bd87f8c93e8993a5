"""Dense float64 helpers, a reproducible Gaussian stream, the normal CDF and a
finite-difference gradient oracle.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 and rank 2.

Random numbers
--------------
:class:`Rng` wraps the Philox4x64-10 counter-based generator (Salmon et al.,
"Parallel random numbers: as easy as 1, 2, 3", SC'11) keyed directly with
``key = (seed, stream)`` and a counter starting at zero, so no seed hashing is
involved.  Raw 64-bit words are turned into uniforms on the open interval
(0, 1) as ``((w >> 11) + 0.5) * 2**-53`` and into standard normals with the
Box-Muller transform::

    z0 = sqrt(-2 log u1) * cos(2 pi u2)
    z1 = sqrt(-2 log u1) * sin(2 pi u2)

Each call to :meth:`Rng.normal` consumes ``2 * ceil(n / 2)`` words and emits
``z0, z1`` pairs in order; an odd trailing value is discarded.  This recipe is
part of the reproducibility contract and must not change without bumping
:data:`RNG_ALGORITHM`.
"""

import math

import numpy as np
from scipy.special import ndtr

RNG_ALGORITHM = "philox4x64-10/box-muller/v1"

_TWO_PI = 2.0 * math.pi


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or infinity shows up where a finite value is required."""


def check_finite(a, what="array"):
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{what} contains non-finite entries")
    return a


def as_matrix(a, what="matrix"):
    """Validate and return ``a`` as a finite 2-D float64 array."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{what} must be 2-D, got shape {a.shape}")
    return check_finite(a, what)


def matmul(a, b):
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return check_finite(a @ b, "product")


def normal_cdf(x):
    """Standard normal CDF.

    Uses ``scipy.special.ndtr`` (Cephes), which evaluates ``erf``/``erfc`` with
    rational approximations accurate to a few ulp in double precision.  Works
    on scalars and arrays.
    """
    x = check_finite(x, "normal_cdf argument")
    out = ndtr(x)
    return float(out) if out.ndim == 0 else out


class Rng:
    """Single-owner reproducible random stream (see module docs)."""

    def __init__(self, seed, stream=0):
        if not 0 <= int(seed) < 2**64 or not 0 <= int(stream) < 2**64:
            raise ValueError("seed and stream must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream = int(stream)
        self._bitgen = np.random.Philox(key=[self.seed, self.stream])

    def reset(self):
        self._bitgen = np.random.Philox(key=[self.seed, self.stream])

    def child(self, stream):
        """Independent stream sharing this seed."""
        return Rng(self.seed, stream)

    def raw(self, n):
        return self._bitgen.random_raw(int(n)).astype(np.uint64)

    def uniform(self, size):
        n = int(np.prod(size))
        words = self.raw(n)
        u = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        return u.reshape(size)

    def normal(self, size):
        n = int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(_TWO_PI * u2)
        z[1::2] = r * np.sin(_TWO_PI * u2)
        return z[:n].reshape(size)

    def permutation(self, n):
        return np.argsort(self.uniform(n), kind="stable")


def sample_gaussian(rng, mu, sigma):
    """Entrywise ``mu + sigma * eps`` with ``eps`` drawn from ``rng``."""
    mu = check_finite(mu, "mu")
    sigma = check_finite(sigma, "sigma")
    if mu.shape != sigma.shape:
        raise ValueError(f"shape mismatch: mu {mu.shape} vs sigma {sigma.shape}")
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    return mu + sigma * rng.normal(mu.shape)


def finite_diff_grad(f, x, eps=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteError(f"f is not finite near entry {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad
