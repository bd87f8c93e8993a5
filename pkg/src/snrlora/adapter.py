"""SVD-style low-rank adapter ``W = W0 + P diag(lambda * mask) Q``.

Orientation (used everywhere in this package): inputs are row vectors, so a
batch ``x`` of shape ``(batch, d1)`` maps to ``y = x @ W`` of shape
``(batch, d2)`` with ``W0`` of shape ``(d1, d2)``, ``P`` of shape ``(d1, r)``
and ``Q`` of shape ``(r, d2)``.

The orthogonality penalty is ``||P^T P - I||_F^2 + ||Q Q^T - I||_F^2`` (both
Gram matrices are ``r x r``), which vanishes exactly when the columns of ``P``
and the rows of ``Q`` are orthonormal.

Snapshot format
---------------
:func:`save_layer` writes a NumPy ``.npz`` archive holding ``w0`` (d1, d2),
``p`` (d1, r), ``lambda`` (r,), ``q`` (r, d2), ``mask`` (r,) bool,
``gamma_orth`` (), ``name`` (), ``module`` () and ``format`` () = ``"snrlora-adapter/1"``.  The array
shapes act as the header.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import as_matrix, check_finite

SNAPSHOT_FORMAT = "snrlora-adapter/1"


@dataclass
class AdapterGradients:
    g_p: np.ndarray
    g_lambda: np.ndarray
    g_q: np.ndarray
    # gradient w.r.t. the layer input, for chaining layers
    g_input: np.ndarray = None


@dataclass
class AdapterLayer:
    w0: np.ndarray
    p: np.ndarray
    lam: np.ndarray
    q: np.ndarray
    mask: np.ndarray = None
    gamma_orth: float = 0.1
    name: str = ""
    module: str = "dense"

    def __post_init__(self):
        self.w0 = as_matrix(self.w0, "w0").copy()
        self.w0.setflags(write=False)
        self.p = as_matrix(self.p, "p").copy()
        self.q = as_matrix(self.q, "q").copy()
        self.lam = check_finite(self.lam, "lambda").reshape(-1).copy()
        d1, d2 = self.w0.shape
        r = self.lam.size
        if self.p.shape != (d1, r) or self.q.shape != (r, d2):
            raise ValueError(
                f"inconsistent factor shapes: w0 {self.w0.shape}, p {self.p.shape}, "
                f"lambda {self.lam.shape}, q {self.q.shape}"
            )
        if self.mask is None:
            self.mask = np.ones(r, dtype=bool)
        else:
            self.mask = _check_mask(self.mask, r)
        if self.gamma_orth < 0:
            raise ValueError("gamma_orth must be nonnegative")

    @classmethod
    def init(cls, w0, rank, rng, init_scale=0.02, gamma_orth=0.1, name="", module="dense"):
        """Fresh adapter: P, Q ~ N(0, init_scale^2), lambda = 0 (a no-op delta)."""
        d1, d2 = np.shape(w0)
        p = init_scale * rng.normal((d1, rank))
        q = init_scale * rng.normal((rank, d2))
        return cls(w0, p, np.zeros(rank), q, gamma_orth=gamma_orth, name=name, module=module)

    @property
    def rank(self):
        return self.lam.size

    @property
    def active_rank(self):
        return int(np.count_nonzero(self.mask))

    @property
    def shape(self):
        return self.w0.shape

    def effective_lambda(self):
        return np.where(self.mask, self.lam, 0.0)

    def delta(self):
        return (self.p * self.effective_lambda()) @ self.q

    def weight(self):
        return self.w0 + self.delta()


def _check_mask(mask, r):
    mask = np.asarray(mask)
    if mask.shape != (r,):
        raise ValueError(f"mask must have length {r}, got shape {mask.shape}")
    return mask.astype(bool).copy()


def forward(layer, x):
    x = as_matrix(x, "x")
    if x.shape[1] != layer.w0.shape[0]:
        raise ValueError(f"x has {x.shape[1]} columns, layer expects {layer.w0.shape[0]}")
    # x W0 + ((x P) * lambda_eff) Q keeps the cost at O(batch * r * d)
    low = (x @ layer.p) * layer.effective_lambda()
    return x @ layer.w0 + low @ layer.q


def orthogonality_penalty(layer):
    r = layer.rank
    eye = np.eye(r)
    gp = layer.p.T @ layer.p - eye
    gq = layer.q @ layer.q.T - eye
    return float(np.sum(gp * gp) + np.sum(gq * gq))


def backward(layer, x, upstream):
    """Gradients of ``sum(upstream * forward(x)) + gamma_orth * R`` w.r.t. P, lambda, Q.

    ``g_lambda`` is the derivative with respect to the *effective* singular
    value, so masked triplets still receive a signal even though their forward
    contribution (and therefore the task part of their P and Q gradients) is
    zero.  The penalty term does not depend on the mask.
    """
    x = as_matrix(x, "x")
    upstream = as_matrix(upstream, "upstream")
    d1, d2 = layer.w0.shape
    if x.shape[1] != d1 or upstream.shape != (x.shape[0], d2):
        raise ValueError(
            f"shape mismatch: x {x.shape}, upstream {upstream.shape}, layer {layer.w0.shape}"
        )
    lam_eff = layer.effective_lambda()
    xp = x @ layer.p                      # (batch, r)
    gq_up = upstream @ layer.q.T          # (batch, r)

    g_lambda = np.sum(xp * gq_up, axis=0)
    g_p = (x.T @ gq_up) * lam_eff
    g_q = (xp * lam_eff).T @ upstream
    g_input = upstream @ layer.w0.T + (gq_up * lam_eff) @ layer.p.T

    if layer.gamma_orth:
        eye = np.eye(layer.rank)
        g_p = g_p + layer.gamma_orth * 4.0 * layer.p @ (layer.p.T @ layer.p - eye)
        g_q = g_q + layer.gamma_orth * 4.0 * (layer.q @ layer.q.T - eye) @ layer.q
    return AdapterGradients(g_p=g_p, g_lambda=g_lambda, g_q=g_q, g_input=g_input)


def set_mask(layer, mask):
    layer.mask = _check_mask(mask, layer.rank)
    return layer


def save_layer(layer, path):
    np.savez(
        path,
        format=np.array(SNAPSHOT_FORMAT),
        w0=layer.w0,
        p=layer.p,
        q=layer.q,
        mask=layer.mask,
        gamma_orth=np.array(float(layer.gamma_orth)),
        name=np.array(layer.name),
        module=np.array(layer.module),
        **{"lambda": layer.lam},
    )


def load_layer(path):
    with np.load(path, allow_pickle=False) as data:
        fmt = str(data["format"])
        if fmt != SNAPSHOT_FORMAT:
            raise ValueError(f"unsupported adapter snapshot format {fmt!r}")
        return AdapterLayer(
            data["w0"],
            data["p"],
            data["lambda"],
            data["q"],
            mask=data["mask"],
            gamma_orth=float(data["gamma_orth"]),
            name=str(data["name"]),
            module=str(data["module"]),
        )
