"""Unbiased vs non-negative PU risk.

A flexible model can push the unbiased estimate below zero by memorising
the labeled positives; the non-negative estimator clamps that bracket.
"""
import numpy as np

from selfpu import datapipe, ndnum
from selfpu.pulosses import ClassPrior, nnpu_risk, sigmoid_loss, upu_risk

prior = ClassPrior(0.5)

# the worked example: perfectly separated P and U scores
print("uPU  on (+10 | -10):", round(upu_risk([10.0], [-10.0], prior).total, 6))
print("nnPU on (+10 | -10):", nnpu_risk([10.0], [-10.0], prior).total)

# unbiasedness: average the uPU estimate over many random PU batches
raw = datapipe.gen_two_gaussians(50_000, mu=1.5, pi_p=0.5, seed=0)
model = ndnum.MlpModel.init([2, 16, 1], np.random.default_rng(1), dtype=np.float64)
z = ndnum.forward(model, raw.features.astype(np.float64))
y = raw.targets
supervised = 0.5 * sigmoid_loss(z[y > 0], 1).mean() + 0.5 * sigmoid_loss(z[y < 0], -1).mean()

rng = np.random.default_rng(2)
pos = np.flatnonzero(y > 0)
est = [upu_risk(z[rng.choice(pos, 64)], z[rng.choice(y.size, 256)], prior).total for _ in range(1000)]
print(f"supervised risk {supervised:.4f}, mean uPU over 1000 batches {np.mean(est):.4f} "
      f"(+/- {np.std(est) / np.sqrt(len(est)):.4f})")
