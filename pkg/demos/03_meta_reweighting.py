"""Per-example loss weights from a one-step lookahead.

For each untrusted unlabeled example we ask whether nudging it towards its
own prediction (entropy) or towards "negative" (unlabeled surrogate) would
lower the loss on a small clean validation batch. Only a gamma
fraction of the batch may keep an entropy weight.
"""
import numpy as np

from selfpu import datapipe, metaweight, ndnum

raw = datapipe.gen_two_gaussians(4000, mu=1.5, pi_p=0.5, seed=3)
val, rest = datapipe.carve_holdout(raw, "positive", 32, seed=3)
model = ndnum.MlpModel.init([2, 16, 1], np.random.default_rng(3))

x_u = rest.features[:256]
z_u = ndnum.forward(model, x_u)
cfg = metaweight.ReweightConfig(delta=1e-2, gamma=1 / 16)
u = metaweight.lookahead_weight_grad(model, x_u, (val.features, val.labels), cfg, z_u)
w = metaweight.meta_weights(model, x_u, z_u, (val.features, val.labels), cfg)

print("raw meta-gradient, first rows:\n", np.round(u[:5] * 1e4, 3), "(x1e-4)")
print(f"rows keeping an entropy weight: {w.kept} of {len(w)}; entropy mass {w.ce_mass:.2f} "
      f"< gamma*n = {cfg.gamma * len(w):.0f}")
print("weights of kept rows:\n", np.round(w.w_star[~w.capped][:5], 3))
value, grads = metaweight.reweighted_loss(model, x_u, w)
print(f"reweighted loss {value:.4f}, gradient norm {np.linalg.norm(grads.flat()):.4f}")
