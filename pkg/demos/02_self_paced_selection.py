"""Growing a trusted set from a warmed-up nnPU model.

After a few epochs of plain nnPU training the model labels the most
confident unlabeled examples itself. The set grows linearly, stays
balanced, and each round is a fresh selection (earlier members can drop out).
"""
import numpy as np

from selfpu import datapipe, ndnum, selfpace
from selfpu.pulosses import ClassPrior

raw = datapipe.gen_two_gaussians(6000, mu=1.5, pi_p=0.5, seed=0)
ds = datapipe.make_pu_split(raw, "positive", 300, seed=0, pi_p=0.5, unlabeled="all")
model = ndnum.MlpModel.init([2, 16, 1], np.random.default_rng(0))
adam = ndnum.AdamState.for_model(model)
it = datapipe.BatchIterator(len(ds), 256, seed=0, stratify=ds.labeled)
prior = ClassPrior(0.5)
empty = selfpace.TrustedSet.empty()

# warm-up: nnPU only
for epoch in range(3):
    for batch in datapipe.next_batches(ds.view(), it, epoch):
        _, g = selfpace.sp_loss(model, empty, batch, prior, len(ds))
        ndnum.adam_step(model, g, adam, 1e-2)

sched = selfpace.PaceSchedule(r_final=0.3, epoch_start=3, epoch_end=10, warmup_epochs=3)
u_ids = ds.u_ids
u_acc = np.mean(np.where(ndnum.forward(model, ds.features[u_ids]) >= 0, 1, -1) == ds.oracle[u_ids])
trusted = None
for epoch in range(4, 11):
    new = selfpace.select_trusted(model, ds.features[u_ids], u_ids, sched, epoch, trusted)
    churn = 0 if trusted is None else len(np.setdiff1d(trusted.ids, new.ids))
    trusted = new
    print(f"epoch {epoch:2d}: |trust|={len(trusted):5d} pos/neg={trusted.n_pos}/{trusted.n_neg} "
          f"evicted={churn:3d} trusted acc={trusted.accuracy(ds.oracle):.4f} (all of D_U {u_acc:.4f})")
    for batch in datapipe.next_batches(ds.view(), it, epoch):
        _, g = selfpace.sp_loss(model, trusted, batch, prior, len(ds))
        ndnum.adam_step(model, g, adam, 1e-2)
