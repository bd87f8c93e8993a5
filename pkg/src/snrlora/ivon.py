"""Variational training with IVON, plus an Adam baseline.

IVON keeps a diagonal Gaussian posterior ``q = N(mu, sigma^2)`` over the flat
parameter vector, with ``sigma = 1 / sqrt(lambda_ess * (h + delta))``.  One
iteration is

1. draw ``theta = mu + sigma * eps`` (:func:`sample_parameters`);
2. evaluate the gradient ``g`` of the loss at ``theta``;
3. call :func:`ivon_step` with ``g`` and ``noise = theta - mu``::

       h_hat = g * noise / sigma^2
       m     = beta1 * m + (1 - beta1) * g
       h     = beta2 * h + (1 - beta2) * h_hat
               + 0.5 * (1 - beta2)^2 * (h - h_hat)^2 / (h + delta)
       mu    = mu - lr * (m / (1 - beta1^t) + delta * mu) / (h + delta)

   ``h`` is clipped at zero afterwards.  ``sigma`` in the Hessian estimate is
   the pre-update value, i.e. the one used to draw ``theta``.

Both :class:`IVON` and :class:`Adam` implement the same small interface
(``draw``, ``step``, ``mean``, ``lr``) so a training loop can swap them.

Checkpoints are ``.npz`` archives (see :func:`save_state`).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .numerics import NonFiniteError, check_finite

CHECKPOINT_FORMAT = "snrlora-ivon/1"
DIVERGENCE_LIMIT = 1e6


class DivergenceError(FloatingPointError):
    pass


class PosteriorUnavailableError(RuntimeError):
    """The optimizer keeps no posterior, so Bayesian quantities are undefined."""


@dataclass
class GaussianState:
    mu: np.ndarray
    h: np.ndarray
    m: np.ndarray
    lambda_ess: float
    delta: float = 1e-4
    lr: float = 0.1
    beta1_m: float = 0.9
    beta2_h: float = 0.99999
    step: int = 0

    @classmethod
    def create(cls, mu, lambda_ess, hess_init=1.0, **kwargs):
        mu = check_finite(mu, "mu").astype(np.float64).reshape(-1).copy()
        return cls(
            mu=mu,
            h=np.full_like(mu, float(hess_init)),
            m=np.zeros_like(mu),
            lambda_ess=float(lambda_ess),
            **kwargs,
        )

    def __post_init__(self):
        if self.lambda_ess <= 0 or self.delta <= 0 or self.lr <= 0:
            raise ValueError("lambda_ess, delta and lr must be positive")
        if not (0 < self.beta1_m < 1 and 0 < self.beta2_h < 1):
            raise ValueError("momenta must lie in (0, 1)")
        if np.any(self.h < 0):
            raise ValueError("h must be nonnegative")


@dataclass
class PriorSpec:
    prior_variance: float

    def __post_init__(self):
        if not (math.isfinite(self.prior_variance) and self.prior_variance > 0):
            raise ValueError("prior_variance must be finite and positive")


def posterior_sigma(state):
    return 1.0 / np.sqrt(state.lambda_ess * (state.h + state.delta))


def sample_parameters(state, rng):
    """Draw ``theta ~ q``; returns ``(theta, noise)`` with ``noise = theta - mu``."""
    noise = posterior_sigma(state) * rng.normal(state.mu.shape)
    return state.mu + noise, noise


def ivon_step(state, grad, noise):
    """One IVON update in place.

    ``grad`` and ``noise`` may be 1-D (one posterior sample) or 2-D with one
    row per sample, in which case the gradient and Hessian estimates are
    averaged over rows.
    """
    grad = np.atleast_2d(np.asarray(grad, dtype=np.float64))
    noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    if grad.shape != noise.shape or grad.shape[1] != state.mu.size:
        raise ValueError(f"grad {grad.shape} / noise {noise.shape} do not match mu {state.mu.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite gradient entries")

    b1, b2 = state.beta1_m, state.beta2_h
    hd = state.h + state.delta
    g = grad.mean(axis=0)
    h_hat = (grad * noise).mean(axis=0) * state.lambda_ess * hd

    state.step += 1
    state.m = b1 * state.m + (1.0 - b1) * g
    h_new = b2 * state.h + (1.0 - b2) * h_hat + 0.5 * (1.0 - b2) ** 2 * (state.h - h_hat) ** 2 / hd
    state.h = np.maximum(h_new, 0.0)
    m_hat = state.m / (1.0 - b1**state.step)
    state.mu = state.mu - state.lr * (m_hat + state.delta * state.mu) / (state.h + state.delta)

    worst = np.max(np.abs(state.mu), initial=0.0)
    if not np.isfinite(worst) or worst > DIVERGENCE_LIMIT:
        bad = int(np.argmax(np.abs(np.nan_to_num(state.mu, nan=np.inf))))
        raise DivergenceError(
            f"IVON diverged at step {state.step}: |mu[{bad}]| = {abs(state.mu[bad]):.3g} "
            f"(h={state.h[bad]:.3g}, m={state.m[bad]:.3g}, lr={state.lr})"
        )
    return state


def kl_to_prior(mu, sigma, prior):
    """``KL(N(mu, sigma^2) || N(0, s^2 I))`` summed over entries."""
    s2 = prior.prior_variance
    ratio = sigma**2 / s2
    return float(0.5 * np.sum(ratio + mu**2 / s2 - 1.0 - np.log(ratio)))


def elbo_estimate(state, prior, loss_at, rng, n_samples=1):
    """Monte-Carlo ``E_q[loss]`` plus the closed-form KL to the prior."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    total = 0.0
    for _ in range(n_samples):
        theta, _ = sample_parameters(state, rng)
        value = float(loss_at(theta))
        if not math.isfinite(value):
            raise NonFiniteError("loss returned a non-finite value")
        total += value
    return total / n_samples + kl_to_prior(state.mu, posterior_sigma(state), prior)


def hessian_vs_squared_grad_diagnostic(state, grad_history, min_history=100):
    """Compare IVON's ``h`` with the empirical mean squared gradient.

    Returns a dict with ``h``, ``mean_sq_grad`` and ``spearman`` (``None`` when
    the rank correlation is undefined, e.g. for constant vectors).
    """
    grads = np.asarray(grad_history, dtype=np.float64)
    if grads.ndim != 2 or grads.shape[0] < min_history:
        raise ValueError(f"need at least {min_history} recorded gradients, got {len(grads)}")
    if grads.shape[1] != state.h.size:
        raise ValueError("gradient history does not match the state dimension")
    mean_sq = np.mean(grads**2, axis=0)
    rho = None
    if np.ptp(state.h) > 0 and np.ptp(mean_sq) > 0:
        rho = float(spearmanr(state.h, mean_sq).statistic)
    return {"h": state.h.copy(), "mean_sq_grad": mean_sq, "spearman": rho}


def save_state(state, path):
    np.savez(
        path,
        format=np.array(CHECKPOINT_FORMAT),
        mu=state.mu,
        h=state.h,
        m=state.m,
        scalars=np.array(
            [state.lambda_ess, state.delta, state.lr, state.beta1_m, state.beta2_h, state.step],
            dtype=np.float64,
        ),
    )


def load_state(path):
    with np.load(path, allow_pickle=False) as data:
        if str(data["format"]) != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {str(data['format'])!r}")
        lam, delta, lr, b1, b2, step = data["scalars"].tolist()
        return GaussianState(
            mu=data["mu"].copy(), h=data["h"].copy(), m=data["m"].copy(),
            lambda_ess=lam, delta=delta, lr=lr, beta1_m=b1, beta2_h=b2, step=int(step),
        )


# --------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0

    @classmethod
    def zeros_like(cls, params, **kwargs):
        return cls(m=np.zeros_like(params, dtype=np.float64), v=np.zeros_like(params, dtype=np.float64), **kwargs)


def adam_step(params, grads, state):
    """Bias-corrected Adam; returns ``(params, state)`` with ``state`` updated in place."""
    grads = np.asarray(grads, dtype=np.float64)
    if not np.all(np.isfinite(grads)):
        raise NonFiniteError("non-finite gradient entries")
    if state.weight_decay:
        grads = grads + state.weight_decay * params
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# ----------------------------------------------------- swappable optimizers


class IVON:
    """Training-loop wrapper around :class:`GaussianState`."""

    name = "ivon"
    has_posterior = True

    def __init__(self, params, lr, lambda_ess, delta=1e-4, beta1=0.9, beta2=0.99999, hess_init=1.0):
        self.state = GaussianState.create(
            params, lambda_ess, hess_init=hess_init, delta=delta, lr=lr,
            beta1_m=beta1, beta2_h=beta2,
        )
        self._noise = []

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = float(value)

    @property
    def mean(self):
        return self.state.mu

    def draw(self, rng):
        """Parameters for the next forward pass (a posterior sample).

        Several draws before one :meth:`step` form a multi-sample estimate.
        """
        theta, noise = sample_parameters(self.state, rng)
        self._noise.append(noise)
        return theta

    def step(self, grad):
        """``grad`` is one gradient per pending draw (1-D for a single draw)."""
        if not self._noise:
            raise RuntimeError("draw() must be called before step()")
        ivon_step(self.state, grad, np.vstack(self._noise))
        self._noise = []

    def posterior(self):
        return self.state.mu, posterior_sigma(self.state)


class Adam:
    name = "adam"
    has_posterior = False

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = check_finite(params, "params").astype(np.float64).reshape(-1).copy()
        self.state = AdamState.zeros_like(
            self.params, lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay
        )

    @property
    def lr(self):
        return self.state.lr

    @lr.setter
    def lr(self, value):
        self.state.lr = float(value)

    @property
    def mean(self):
        return self.params

    def draw(self, rng):
        return self.params

    def step(self, grad):
        grad = np.asarray(grad, dtype=np.float64)
        if grad.ndim == 2:
            grad = grad.mean(axis=0)
        self.params, _ = adam_step(self.params, grad, self.state)

    def posterior(self):
        raise PosteriorUnavailableError("Adam keeps no posterior; Bayesian scores need IVON")
