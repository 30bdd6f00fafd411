import numpy as np
import pytest

from selfpu import ndnum


def fd_param_grad(model: ndnum.MlpModel, loss, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of ``loss(model)`` over the flat parameters."""
    theta = model.flat().copy()
    g = np.empty_like(theta)
    for i in range(theta.size):
        t = theta.copy()
        t[i] += h
        model.set_flat(t)
        up = loss(model)
        t[i] -= 2 * h
        model.set_flat(t)
        down = loss(model)
        g[i] = (up - down) / (2 * h)
    model.set_flat(theta)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, float).ravel(), np.asarray(b, float).ravel()
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def tiny_model(seed: int, dims=(3, 5, 4, 1)) -> ndnum.MlpModel:
    m = ndnum.MlpModel.init(list(dims), np.random.default_rng(seed), dtype=np.float64)
    rng = np.random.default_rng(seed + 99)
    for b in m.biases:
        b[...] = rng.normal(0, 0.3, b.shape)
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
