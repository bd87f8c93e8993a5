"""MLP of adapter layers with a flat trainable-parameter view."""

import numpy as np

from ..adapter import AdapterLayer, backward, forward, orthogonality_penalty
from ..importance import aggregate_triplet
from .task import ACTIVATION


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class AdaptedMLP:
    """Frozen base weights with one SVD-style adapter per layer.

    The flat vector concatenates, layer by layer, ``p.ravel()``, ``lam`` and
    ``q.ravel()``.
    """

    def __init__(self, base_weights, rank, rng, kind="regression", init_scale=0.02, gamma_orth=0.1):
        self.kind = kind
        self.layers = [
            AdapterLayer.init(w, rank, rng, init_scale=init_scale, gamma_orth=gamma_orth,
                              name=f"layer{k}", module="dense")
            for k, w in enumerate(base_weights)
        ]
        self._slices = []
        start = 0
        for layer in self.layers:
            d1, d2 = layer.shape
            r = layer.rank
            sp = slice(start, start + d1 * r)
            sl = slice(sp.stop, sp.stop + r)
            sq = slice(sl.stop, sl.stop + r * d2)
            self._slices.append((sp, sl, sq))
            start = sq.stop
        self.n_params = start

    def get_params(self):
        return np.concatenate([np.concatenate([l.p.ravel(), l.lam, l.q.ravel()]) for l in self.layers])

    def set_params(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        for layer, (sp, sl, sq) in zip(self.layers, self._slices):
            layer.p = theta[sp].reshape(layer.p.shape).copy()
            layer.lam = theta[sl].copy()
            layer.q = theta[sq].reshape(layer.q.shape).copy()

    def split(self, flat):
        """Per-layer ``(p, lam, q)`` views of any flat per-parameter vector."""
        flat = np.asarray(flat)
        return [
            (flat[sp].reshape(l.p.shape), flat[sl], flat[sq].reshape(l.q.shape))
            for l, (sp, sl, sq) in zip(self.layers, self._slices)
        ]

    def predict(self, x, theta=None):
        if theta is not None:
            self.set_params(theta)
        h = x
        for k, layer in enumerate(self.layers):
            h = forward(layer, h)
            if k < len(self.layers) - 1:
                h = ACTIVATION(h)
        return h

    def loss_and_grad(self, theta, x, y):
        """``(task_loss + penalty, task_loss, flat_grad)`` at ``theta``."""
        self.set_params(theta)
        inputs, h = [], x
        for k, layer in enumerate(self.layers):
            inputs.append(h)
            h = forward(layer, h)
            if k < len(self.layers) - 1:
                h = ACTIVATION(h)
        n = x.shape[0]
        if self.kind == "regression":
            resid = h - y
            task_loss = 0.5 * float(np.sum(resid * resid)) / n
            up = resid / n
        else:
            prob = _softmax(h)
            task_loss = -float(np.mean(np.log(prob[np.arange(n), y] + 1e-300)))
            up = prob.copy()
            up[np.arange(n), y] -= 1.0
            up /= n

        grad = np.empty(self.n_params)
        penalty = 0.0
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            g = backward(layer, inputs[k], up)
            sp, sl, sq = self._slices[k]
            grad[sp] = g.g_p.ravel()
            grad[sl] = g.g_lambda
            grad[sq] = g.g_q.ravel()
            penalty += layer.gamma_orth * orthogonality_penalty(layer)
            if k > 0:
                # inputs[k] = tanh(pre); d tanh = 1 - tanh^2
                up = g.g_input * (1.0 - inputs[k] ** 2)
        return task_loss + penalty, task_loss, grad

    def metric(self, x, y, theta=None):
        """RMSE for regression, accuracy for classification."""
        out = self.predict(x, theta)
        if self.kind == "regression":
            return float(np.sqrt(np.mean((out - y) ** 2)))
        return float(np.mean(np.argmax(out, axis=1) == y))

    def triplet_scores(self, per_param):
        scores = []
        for k, (layer, (sp_, sl_, sq_)) in enumerate(zip(self.layers, self.split(per_param))):
            scores.extend(aggregate_triplet(layer, sp_, sl_, sq_, layer_id=k))
        return scores

    def masks(self):
        return [l.mask.copy() for l in self.layers]

    def active_ranks(self):
        return [l.active_rank for l in self.layers]

    def active_param_count(self):
        return sum(l.active_rank * (l.shape[0] + l.shape[1] + 1) for l in self.layers)
