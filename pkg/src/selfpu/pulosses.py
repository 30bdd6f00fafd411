"""Scalar surrogate losses and the unbiased / non-negative PU risk estimators.

Everything here works on raw model scores ``z = g(x)`` and returns values
together with derivatives w.r.t. those scores, so callers can combine
several terms into one upstream gradient before a single backward pass.
All functions broadcast over numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BatchCompositionError

GRAD_MODES = ("flip", "zero")


def logistic(z):
    z = np.asarray(z)
    out = np.empty_like(z, dtype=np.result_type(z, np.float32))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else out[()]


def softplus(z):
    z = np.asarray(z)
    return np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))


@dataclass(frozen=True)
class ClassPrior:
    pi_p: float

    def __post_init__(self):
        if not 0.0 < self.pi_p < 1.0:
            raise ValueError(f"class prior must lie in (0, 1), got {self.pi_p}")

    @property
    def pi_n(self) -> float:
        return 1.0 - self.pi_p


def sigmoid_loss(score, y):
    """``L(z, y) = logistic(-y z)``."""
    return logistic(-np.asarray(y) * np.asarray(score))


def sigmoid_loss_grad(score, y):
    y = np.asarray(y)
    s = logistic(-y * np.asarray(score))
    return -y * s * (1.0 - s)


def cross_entropy(score, soft_label):
    """Binary cross-entropy of ``logistic(score)`` against target
    probability ``soft_label``, in minimisation form.

    Written via softplus so it stays finite and exact for saturated scores.
    """
    z = np.asarray(score)
    q = np.asarray(soft_label)
    return q * softplus(-z) + (1.0 - q) * softplus(z)


def cross_entropy_grad(score, soft_label):
    return logistic(score) - np.asarray(soft_label)


def prediction_entropy(score):
    """Cross-entropy of a prediction against itself: the binary entropy of
    ``logistic(score)``, with the soft label kept live."""
    p = logistic(score)
    return cross_entropy(score, p)


def prediction_entropy_grad(score):
    z = np.asarray(score)
    p = logistic(z)
    return -z * p * (1.0 - p)


def per_example_unlabeled_risk(score):
    """Per-example stand-in for the unlabeled part of the nnPU risk:
    ``L(z, -1) = logistic(z)``."""
    return logistic(score)


def per_example_unlabeled_risk_grad(score):
    p = logistic(score)
    return p * (1.0 - p)


@dataclass(frozen=True)
class RiskBreakdown:
    positive_term: float
    unlabeled_term: float
    correction_term: float
    clamped: bool
    total: float

    @property
    def bracket(self) -> float:
        return self.unlabeled_term - self.correction_term


def _check(p_scores, u_scores, u_weights=None):
    p = np.atleast_1d(np.asarray(p_scores, dtype=np.float64))
    u = np.atleast_1d(np.asarray(u_scores, dtype=np.float64))
    if p.size == 0:
        raise BatchCompositionError("risk estimate needs at least one positive score")
    if u.size == 0:
        raise BatchCompositionError("risk estimate needs at least one unlabeled score")
    if u_weights is None:
        w = np.ones_like(u)
    else:
        w = np.asarray(u_weights, dtype=np.float64)
        if w.shape != u.shape:
            raise BatchCompositionError(f"{w.size} unlabeled weights for {u.size} scores")
    return p, u, w


def _terms(p, u, w, prior):
    positive = prior.pi_p * float(np.mean(sigmoid_loss(p, 1.0)))
    unlabeled = float(np.sum(w * sigmoid_loss(u, -1.0))) / u.size
    correction = prior.pi_p * float(np.mean(sigmoid_loss(p, -1.0)))
    return positive, unlabeled, correction


def upu_risk(p_scores, u_scores, prior: ClassPrior, u_weights=None) -> RiskBreakdown:
    """Unbiased PU risk with the sigmoid loss; may be negative.

    ``u_weights`` optionally scales each unlabeled example's term (the
    default, all ones, is the plain estimator).
    """
    p, u, w = _check(p_scores, u_scores, u_weights)
    pos, unl, cor = _terms(p, u, w, prior)
    return RiskBreakdown(pos, unl, cor, False, pos + (unl - cor))


def nnpu_risk(p_scores, u_scores, prior: ClassPrior, u_weights=None) -> RiskBreakdown:
    """Non-negative PU risk: the negative-class bracket is clamped at zero."""
    p, u, w = _check(p_scores, u_scores, u_weights)
    pos, unl, cor = _terms(p, u, w, prior)
    bracket = unl - cor
    return RiskBreakdown(pos, unl, cor, bracket < 0, pos + max(0.0, bracket))


def upu_grad(p_scores, u_scores, prior: ClassPrior, u_weights=None):
    p, u, w = _check(p_scores, u_scores, u_weights)
    gp = prior.pi_p / p.size * (sigmoid_loss_grad(p, 1.0) - sigmoid_loss_grad(p, -1.0))
    gu = w * sigmoid_loss_grad(u, -1.0) / u.size
    return gp, gu


def nnpu_grad(p_scores, u_scores, prior: ClassPrior, mode: str = "flip", u_weights=None):
    """Per-score gradients ``(d/dp_scores, d/du_scores)`` of the nnPU objective.

    Unclamped, this is the gradient of the risk itself. When the bracket is
    negative, ``mode="flip"`` descends on the negated bracket (the positive
    term's own gradient is kept) and ``mode="zero"`` drops the bracket's
    gradient entirely.
    """
    if mode not in GRAD_MODES:
        raise ValueError(f"mode must be one of {GRAD_MODES}")
    p, u, w = _check(p_scores, u_scores, u_weights)
    pos, unl, cor = _terms(p, u, w, prior)
    g_pos = prior.pi_p / p.size * sigmoid_loss_grad(p, 1.0)
    g_br_p = -prior.pi_p / p.size * sigmoid_loss_grad(p, -1.0)
    g_br_u = w * sigmoid_loss_grad(u, -1.0) / u.size
    if unl - cor >= 0:
        sign = 1.0
    elif mode == "flip":
        sign = -1.0
    else:
        sign = 0.0
    return g_pos + sign * g_br_p, sign * g_br_u


def risk_and_grad(p_scores, u_scores, prior: ClassPrior, estimator: str = "nnpu",
                  mode: str = "flip", u_weights=None):
    """Convenience pairing of a risk estimate with its training gradient."""
    if estimator == "nnpu":
        r = nnpu_risk(p_scores, u_scores, prior, u_weights)
        gp, gu = nnpu_grad(p_scores, u_scores, prior, mode, u_weights)
    elif estimator == "upu":
        r = upu_risk(p_scores, u_scores, prior, u_weights)
        gp, gu = upu_grad(p_scores, u_scores, prior, u_weights)
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    return r, gp, gu
