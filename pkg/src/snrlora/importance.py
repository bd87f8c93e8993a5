"""Per-parameter importance metrics and their aggregation into triplet scores.

Two families:

* ``"sensitivity"`` needs the weights *and* their gradients every step and is
  smoothed with the two-EMA recursion (:func:`update_sensitivity_ema`).
* ``"snr_mean"``, ``"snr_abs"``, ``"magnitude"`` and ``"inv_sigma"`` read only
  the posterior ``(mu, sigma)`` that IVON already maintains; their scorer
  interface takes no gradient at all.
"""

import inspect
import math
from dataclasses import dataclass

import numpy as np

from .numerics import check_finite, normal_cdf

SCORER_NAMES = ("sensitivity", "snr_mean", "snr_abs", "magnitude", "inv_sigma")
POSTERIOR_SCORERS = ("snr_mean", "snr_abs", "magnitude", "inv_sigma")

# floor under the folded-normal variance before taking its square root
SNR_ABS_RADICAND_FLOOR = 1e-24
SNR_ABS_AT_ZERO = math.sqrt(2.0 / math.pi) / math.sqrt(1.0 - 2.0 / math.pi)


def _positive_sigma(sigma):
    sigma = check_finite(sigma, "sigma")
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    return sigma


def _same_length(a, b, names):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"length mismatch between {names[0]} {np.shape(a)} and {names[1]} {np.shape(b)}")


def sensitivity(theta, grad):
    theta = check_finite(theta, "theta")
    grad = check_finite(grad, "grad")
    _same_length(theta, grad, ("theta", "grad"))
    return np.abs(theta * grad)


def snr_mean(mu, sigma):
    mu = check_finite(mu, "mu")
    sigma = _positive_sigma(sigma)
    _same_length(mu, sigma, ("mu", "sigma"))
    return np.abs(mu) / sigma


def folded_normal_mean(mu, sigma):
    """``E|theta|`` for ``theta ~ N(mu, sigma^2)``."""
    return mu * (2.0 * normal_cdf(mu / sigma) - 1.0) + (
        2.0 * sigma / math.sqrt(2.0 * math.pi)
    ) * np.exp(-(mu**2) / (2.0 * sigma**2))


def snr_abs(mu, sigma):
    """``E|theta| / Std|theta|`` under the Gaussian posterior (folded normal)."""
    mu = check_finite(mu, "mu")
    sigma = _positive_sigma(sigma)
    _same_length(mu, sigma, ("mu", "sigma"))
    mean_abs = folded_normal_mean(mu, sigma)
    radicand = np.maximum(sigma**2 + mu**2 - mean_abs**2, SNR_ABS_RADICAND_FLOOR)
    return mean_abs / np.sqrt(radicand)


def magnitude(mu):
    return np.abs(check_finite(mu, "mu"))


def inv_sigma(sigma):
    return 1.0 / _positive_sigma(sigma)


@dataclass
class ImportanceState:
    i_bar: np.ndarray
    u_bar: np.ndarray
    beta1: float = 0.85
    beta2: float = 0.85
    step: int = 0

    @classmethod
    def zeros(cls, n, beta1=0.85, beta2=0.85):
        return cls(np.zeros(n), np.zeros(n), beta1, beta2)

    def score(self):
        return self.i_bar * self.u_bar


def update_sensitivity_ema(state, i_t):
    """Advance the smoothing recursions; returns ``(state, s)`` with ``s = I_bar * U_bar``.

    ``U_bar`` is updated with the freshly smoothed ``I_bar``.
    """
    i_t = check_finite(i_t, "sensitivity")
    if np.any(i_t < 0):
        raise ValueError("sensitivity values must be nonnegative")
    _same_length(i_t, state.i_bar, ("i_t", "i_bar"))
    state.i_bar = state.beta1 * state.i_bar + (1.0 - state.beta1) * i_t
    state.u_bar = state.beta2 * state.u_bar + (1.0 - state.beta2) * np.abs(i_t - state.i_bar)
    state.step += 1
    return state, state.score()


# ---------------------------------------------------------------- scorers


class SensitivityScorer:
    name = "sensitivity"
    needs_gradients = True

    def __init__(self, n, beta1=0.85, beta2=0.85):
        self.state = ImportanceState.zeros(n, beta1, beta2)

    def update(self, theta, grad):
        update_sensitivity_ema(self.state, sensitivity(theta, grad))

    def scores(self):
        return self.state.score()


class PosteriorScorer:
    """Scores computed from ``(mu, sigma)`` only, optionally EMA-smoothed."""

    needs_gradients = False
    _metrics = {
        "snr_mean": snr_mean,
        "snr_abs": snr_abs,
        "magnitude": lambda mu, sigma: magnitude(mu),
        "inv_sigma": lambda mu, sigma: inv_sigma(sigma),
    }

    def __init__(self, name, ema=None):
        if name not in self._metrics:
            raise ValueError(f"unknown posterior scorer {name!r}")
        if ema is not None and not 0 < ema < 1:
            raise ValueError("ema must lie in (0, 1)")
        self.name = name
        self.ema = ema
        self._smoothed = None

    def update(self, mu, sigma):
        value = self._metrics[self.name](mu, sigma)
        if self.ema is None or self._smoothed is None:
            self._smoothed = value
        else:
            self._smoothed = self.ema * self._smoothed + (1.0 - self.ema) * value

    def scores(self):
        if self._smoothed is None:
            raise RuntimeError("no posterior seen yet")
        return self._smoothed


def make_scorer(name, n, beta1=0.85, beta2=0.85, ema=None):
    if name == "sensitivity":
        return SensitivityScorer(n, beta1, beta2)
    if name in POSTERIOR_SCORERS:
        return PosteriorScorer(name, ema=ema)
    raise ValueError(f"unknown scorer {name!r}; expected one of {SCORER_NAMES}")


def update_parameters(scorer):
    """Names of the arguments the scorer's ``update`` consumes."""
    return tuple(inspect.signature(scorer.update).parameters)


# ------------------------------------------------------------ aggregation


@dataclass(frozen=True)
class TripletScore:
    layer_id: int
    triplet_index: int
    score: float


def aggregate_triplet(layer, score_p, score_lambda, score_q, layer_id=0):
    """Triplet ``k`` scores ``s(lambda_k) + mean_i s(P[i, k]) + mean_j s(Q[k, j])``."""
    score_p = np.asarray(score_p, dtype=np.float64)
    score_lambda = np.asarray(score_lambda, dtype=np.float64).reshape(-1)
    score_q = np.asarray(score_q, dtype=np.float64)
    if (score_p.shape != layer.p.shape or score_q.shape != layer.q.shape
            or score_lambda.shape != layer.lam.shape):
        raise ValueError("score shapes do not match the layer")
    total = score_lambda + score_p.mean(axis=0) + score_q.mean(axis=1)
    check_finite(total, "triplet scores")
    return [TripletScore(layer_id, k, float(v)) for k, v in enumerate(total)]
