"""Planted teacher-student tasks with known per-layer adaptation rank.

The teacher is an MLP ``x -> tanh(x W1) -> ... -> x WL`` whose weights are
``W_k = B_k + D_k``: a random "pre-trained" base ``B_k`` plus a planted delta
``D_k`` of exact rank ``planted_ranks[k]``.  The student starts from the bases
alone, so the adaptation it has to learn is exactly the set of deltas, and a
layer with planted rank 0 needs no adaptation at all.
"""

from dataclasses import dataclass

import numpy as np

from ..numerics import Rng

ACTIVATION = np.tanh


@dataclass
class SyntheticTask:
    kind: str
    widths: tuple
    planted_ranks: tuple
    base_weights: list
    deltas: list
    noise: float
    seed: int
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray

    @property
    def n_layers(self):
        return len(self.base_weights)

    @property
    def teacher_weights(self):
        return [b + d for b, d in zip(self.base_weights, self.deltas)]


def mlp_forward(weights, x):
    h = x
    for k, w in enumerate(weights):
        h = h @ w
        if k < len(weights) - 1:
            h = ACTIVATION(h)
    return h


def _orthonormal(rng, n, r):
    q, _ = np.linalg.qr(rng.normal((n, r)))
    return q


def planted_delta(rng, d1, d2, rank, scale):
    """``scale * U V^T`` with orthonormal ``U`` (d1 x rank) and ``V`` (d2 x rank)."""
    if rank == 0:
        return np.zeros((d1, d2))
    u = _orthonormal(rng, d1, rank)
    v = _orthonormal(rng, d2, rank)
    return scale * u @ v.T


def generate_task(kind="regression", widths=(16, 24, 24, 24, 8), planted_ranks=(0, 1, 3, 0),
                  delta_scale=1.5, noise=0.05, n_train=1024, n_val=512, seed=0):
    if kind not in ("regression", "classification"):
        raise ValueError(f"unknown task kind {kind!r}")
    widths = tuple(int(w) for w in widths)
    planted_ranks = tuple(int(r) for r in planted_ranks)
    if len(widths) != len(planted_ranks) + 1:
        raise ValueError("need one planted rank per layer (len(widths) - 1)")
    for k, r in enumerate(planted_ranks):
        if not 0 <= r <= min(widths[k], widths[k + 1]):
            raise ValueError(f"planted rank {r} impossible for a {widths[k]}x{widths[k + 1]} layer")
    if noise < 0 or n_train < 1 or n_val < 1:
        raise ValueError("noise must be >= 0 and split sizes positive")
    if kind == "classification" and widths[-1] < 2:
        raise ValueError("classification needs at least two output classes")

    rng = Rng(seed, stream=1)
    base, deltas = [], []
    for d1, d2, r in zip(widths[:-1], widths[1:], planted_ranks):
        # unit-variance pre-activations keep tanh out of saturation
        base.append(rng.normal((d1, d2)) / np.sqrt(d1))
        deltas.append(planted_delta(rng, d1, d2, r, delta_scale))
    teacher = [b + d for b, d in zip(base, deltas)]

    n = n_train + n_val
    x = rng.normal((n, widths[0]))
    out = mlp_forward(teacher, x)
    if kind == "regression":
        y = out + noise * rng.normal(out.shape)
    else:
        logits = out + noise * rng.normal(out.shape)
        y = np.argmax(logits, axis=1)
    return SyntheticTask(
        kind=kind, widths=widths, planted_ranks=planted_ranks, base_weights=base,
        deltas=deltas, noise=float(noise), seed=int(seed),
        x_train=x[:n_train], y_train=y[:n_train], x_val=x[n_train:], y_val=y[n_train:],
    )
