"""Dense numeric core: a ReLU multilayer perceptron with hand-written
forward, backward and forward-mode (JVP) passes, plus Adam and a cosine
learning-rate schedule.

Inputs may be a single feature vector of shape ``(d,)`` or a batch of shape
``(n, d)``. The network always has a single output unit and returns a raw
score; the logistic map is applied only inside the losses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import NumericError, ScheduleError, ShapeError


@dataclass
class Gradients:
    """Per-layer arrays with the same shapes as an :class:`MlpModel`."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def dot(self, other: "Gradients") -> float:
        return float(sum(np.vdot(a, b) for a, b in zip(self.arrays(), other.arrays())))

    def scaled(self, c: float) -> "Gradients":
        return Gradients([w * c for w in self.weights], [b * c for b in self.biases])

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )

    def __mul__(self, c: float) -> "Gradients":
        return self.scaled(c)

    __rmul__ = __mul__


@dataclass
class MlpModel:
    """Fully connected network; ``weights[i]`` has shape
    ``(layer_dims[i + 1], layer_dims[i])``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(f"layer {i}: input width {w.shape[1]} does not chain")
        if self.weights[-1].shape[0] != 1:
            raise ShapeError("output layer must have width 1")

    @classmethod
    def init(cls, layer_dims, rng: np.random.Generator, dtype=np.float32) -> "MlpModel":
        """Glorot-uniform weights, zero biases."""
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or min(dims) < 1 or dims[-1] != 1:
            raise ShapeError(f"invalid layer_dims {dims}")
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype))
            biases.append(np.zeros(fan_out, dtype=dtype))
        return cls(weights, biases)

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype) -> "MlpModel":
        return MlpModel([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])

    def zeros_like(self) -> Gradients:
        return Gradients([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def set_flat(self, theta: np.ndarray) -> None:
        offset = 0
        for a in self.arrays():
            a[...] = theta[offset:offset + a.size].reshape(a.shape)
            offset += a.size
        if offset != theta.size:
            raise ShapeError(f"flat vector has {theta.size} entries, model has {offset}")


class ForwardCache(NamedTuple):
    inputs: list[np.ndarray]   # layer inputs, inputs[0] is the batch itself
    pre: list[np.ndarray]      # pre-activations per layer


def _as_batch(model: MlpModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=model.dtype)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise ShapeError(f"input of shape {x.shape} does not match input width {model.layer_dims[0]}")
    return x, single


def forward(model: MlpModel, x, return_cache: bool = False):
    """Score ``g(x)``: a float for a single vector, an ``(n,)`` array for a batch."""
    h, single = _as_batch(model, x)
    inputs, pre = [], []
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z = h @ w.T + b
        pre.append(z)
        h = np.maximum(z, 0) if i < last else z
    scores = h[:, 0]
    out = float(scores[0]) if single else scores
    if return_cache:
        return out, ForwardCache(inputs, pre)
    return out


def backward(model: MlpModel, x, dL_dscore, cache: ForwardCache | None = None) -> Gradients:
    """Gradient of a loss w.r.t. the parameters given ``dL/dg(x)`` per example.

    For a batch the per-example contributions are summed.
    """
    if cache is None:
        _, cache = forward(model, x, return_cache=True)
    n = cache.inputs[0].shape[0]
    delta = np.asarray(dL_dscore, dtype=model.dtype).reshape(-1, 1)
    if delta.shape[0] != n:
        raise ShapeError(f"{delta.shape[0]} upstream gradients for a batch of {n}")
    gw = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        gw[i] = delta.T @ cache.inputs[i]
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ model.weights[i]) * (cache.pre[i - 1] > 0)
    return Gradients(gw, gb)


def jvp(model: MlpModel, x, direction: Gradients) -> np.ndarray:
    """Directional derivative of the scores along ``direction`` in parameter
    space, i.e. ``<direction, dg(x_i)/dtheta>`` for every row ``x_i``."""
    h, _ = _as_batch(model, x)
    dh = np.zeros_like(h)
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        dw, db = direction.weights[i], direction.biases[i]
        z = h @ w.T + b
        dz = dh @ w.T + h @ dw.T + db
        if i < last:
            mask = z > 0
            h, dh = z * mask, dz * mask
        else:
            dh = dz
    return dh[:, 0]


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: MlpModel, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(
            [np.zeros_like(a) for a in model.arrays()],
            [np.zeros_like(a) for a in model.arrays()],
            0, beta1, beta2, eps,
        )

    def copy(self) -> "AdamState":
        return AdamState([a.copy() for a in self.m], [a.copy() for a in self.v],
                         self.step, self.beta1, self.beta2, self.eps)


def adam_step(model: MlpModel, grads: Gradients, state: AdamState, lr: float,
              weight_decay: float = 0.0) -> None:
    """In-place bias-corrected Adam update of ``model`` and ``state``."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    params = model.arrays()
    gs = grads.arrays()
    if len(gs) != len(params):
        raise ShapeError("gradient structure does not match model")
    offset = 0
    for p, g in zip(params, gs):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        bad = ~np.isfinite(g)
        if bad.any():
            idx = offset + int(np.flatnonzero(bad.ravel())[0])
            raise NumericError(f"non-finite gradient at flat parameter index {idx}")
        offset += p.size
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, gs, state.m, state.v):
        if weight_decay:
            g = g + weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)


@dataclass(frozen=True)
class LrSchedule:
    lr_max: float = 1e-4
    lr_min: float = 0.0
    t_max: int = 200

    def __post_init__(self):
        if not self.lr_max > 0 or self.lr_min < 0 or self.lr_min > self.lr_max or self.t_max < 1:
            raise ScheduleError(f"invalid schedule {self}")


def cosine_lr(sched: LrSchedule, epoch: int) -> float:
    if not 0 <= epoch <= sched.t_max:
        raise ScheduleError(f"epoch {epoch} outside [0, {sched.t_max}]")
    return sched.lr_min + 0.5 * (sched.lr_max - sched.lr_min) * (1.0 + math.cos(math.pi * epoch / sched.t_max))
