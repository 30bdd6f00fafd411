"""Self-calibrated loss reweighting.

For every untrusted unlabeled example ``i`` in a batch two candidate losses
compete: the prediction entropy (soft-label cross-entropy against the
model's own prediction, ``l_i1``) and the per-example unlabeled surrogate
``logistic(z_i)`` (``l_i2``). Their mixing weights come from a one-step
lookahead: perturb the weights around zero, take a virtual SGD step of size
``delta`` and ask how the clean validation loss would change. Because each
``l_ik`` depends on the parameters only through the score ``z_i``,

    u_ik = delta * <grad L_val, grad l_ik> = delta * l_ik'(z_i) * <grad L_val, grad z_i>,

and the inner products for a whole batch are a single forward-mode pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndnum
from .datapipe import MetaValidationSet
from .errors import ConfigError, ShapeError
from .pulosses import (cross_entropy, cross_entropy_grad, per_example_unlabeled_risk,
                       per_example_unlabeled_risk_grad, prediction_entropy, prediction_entropy_grad)


@dataclass(frozen=True)
class ReweightConfig:
    delta: float = 1e-4
    gamma: float = 1.0 / 16.0
    m: int = 256

    def __post_init__(self):
        if self.delta < 0 or self.gamma < 0 or self.m < 1:
            raise ConfigError(f"invalid reweighting config {self}")


@dataclass
class BatchWeights:
    w: np.ndarray         # (n, 2) rectified, column-normalised weights
    w_star: np.ndarray    # (n, 2) capped weights on the per-example scale
    capped: np.ndarray    # (n,) bool, True for rows pushed to (0, 1)
    kept: int             # number of rows keeping their entropy weight

    @property
    def ce_mass(self) -> float:
        return float(self.w_star[:, 0].sum())

    def __len__(self):
        return self.w.shape[0]


def validation_loss(model: ndnum.MlpModel, x_val, y_val) -> float:
    z = ndnum.forward(model, x_val)
    return float(np.mean(cross_entropy(z, (np.asarray(y_val) > 0).astype(np.float64))))


def validation_grad(model: ndnum.MlpModel, x_val, y_val) -> ndnum.Gradients:
    """Gradient of the mean clean cross-entropy on a validation batch."""
    if len(y_val) == 0:
        raise ConfigError("validation batch is empty")
    q = (np.asarray(y_val) > 0).astype(np.float64)
    z, cache = ndnum.forward(model, x_val, return_cache=True)
    return ndnum.backward(model, x_val, cross_entropy_grad(z, q) / q.size, cache)


def lookahead_weight_grad(model: ndnum.MlpModel, x_u, val: MetaValidationSet | tuple,
                          cfg: ReweightConfig, z_u=None) -> np.ndarray:
    """Raw meta-gradient ``u`` of shape ``(n, 2)`` for the batch rows ``x_u``.

    ``val`` is a validation batch, either a :class:`MetaValidationSet` or a
    ``(features, labels)`` pair. The model is not modified.
    """
    x_val, y_val = (val.features, val.labels) if isinstance(val, MetaValidationSet) else val
    if len(y_val) == 0:
        raise ConfigError("validation batch is empty")
    if z_u is None:
        z_u = ndnum.forward(model, x_u)
    z_u = np.asarray(z_u, dtype=np.float64)
    if cfg.delta == 0:
        return np.zeros((z_u.size, 2))
    g_val = validation_grad(model, x_val, y_val)
    t = ndnum.jvp(model, x_u, g_val).astype(np.float64)
    u = np.empty((z_u.size, 2))
    u[:, 0] = cfg.delta * prediction_entropy_grad(z_u) * t
    u[:, 1] = cfg.delta * per_example_unlabeled_risk_grad(z_u) * t
    return u


def normalize_and_cap(u: np.ndarray, cfg: ReweightConfig) -> BatchWeights:
    """Rectify, normalise each column to unit sum, then cap the entropy mass.

    Rows are ranked by descending entropy weight (ties by row index). With
    ``n`` rows, normalised weights are rescaled by ``n`` so that an ordinary
    unweighted example has weight 1. Leading rows keep both weights while
    the running sum of their rescaled entropy weights stays below
    ``gamma * n``; every other row becomes ``(0, 1)``, i.e. plain PU loss.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[1] != 2 or u.shape[0] < 1:
        raise ShapeError(f"expected an (n, 2) matrix, got {u.shape}")
    n = u.shape[0]
    w = np.maximum(u, 0.0)
    sums = w.sum(axis=0)
    for k in range(2):
        if sums[k] > 0:
            w[:, k] /= sums[k]
    w_star = np.zeros_like(w)
    w_star[:, 1] = 1.0
    capped = np.ones(n, dtype=bool)
    kept = 0
    if sums[0] > 0:
        order = np.lexsort((np.arange(n), -w[:, 0]))
        prefix = np.cumsum(n * w[order, 0])
        kept = int(np.searchsorted(prefix, cfg.gamma * n, side="left"))
        rows = order[:kept]
        w_star[rows] = n * w[rows]
        capped[rows] = False
    return BatchWeights(w, w_star, capped, kept)


def reweighted_loss(model: ndnum.MlpModel, x_u, weights: BatchWeights):
    """Weighted mean of entropy and unlabeled-surrogate losses over ``x_u``.

    The weights are constants; returns ``(value, Gradients)``.
    """
    z, cache = ndnum.forward(model, x_u, return_cache=True)
    z = np.asarray(z, dtype=np.float64)
    if z.size != len(weights):
        raise ShapeError(f"{len(weights)} weight rows for a batch of {z.size}")
    w1, w2 = weights.w_star[:, 0], weights.w_star[:, 1]
    value = float(np.mean(w1 * prediction_entropy(z) + w2 * per_example_unlabeled_risk(z)))
    dz = (w1 * prediction_entropy_grad(z) + w2 * per_example_unlabeled_risk_grad(z)) / z.size
    return value, ndnum.backward(model, x_u, dz, cache)


def sample_validation_batch(val: MetaValidationSet, m: int, rng: np.random.Generator):
    idx = rng.choice(len(val), size=min(m, len(val)), replace=False)
    return val.features[idx], val.labels[idx]


def meta_weights(model: ndnum.MlpModel, x_u, z_u, val_batch, cfg: ReweightConfig) -> BatchWeights:
    """Lookahead followed by normalisation and capping, for one batch."""
    if len(z_u) == 0:
        empty = np.zeros((0, 2))
        return BatchWeights(empty, empty, np.zeros(0, bool), 0)
    if cfg.gamma == 0:
        u = np.zeros((len(z_u), 2))
    else:
        u = lookahead_weight_grad(model, x_u, val_batch, cfg, z_u=z_u)
    return normalize_and_cap(u, cfg)

