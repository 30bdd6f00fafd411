"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the report lines.
Criteria 7 and 8 need the MNIST IDX files; point ``SELFPU_MNIST_DIR`` at
them to enable those runs (hours on a CPU).
"""
import os
import time

import numpy as np
import pytest

from selfpu import datapipe, ndnum, selfpace as sp
from selfpu import distill as ds
from selfpu import metaweight as mw
from selfpu import pulosses as pl
from selfpu.harness.config import TrainerConfig
from selfpu.harness.trainer import run_training

from conftest import fd_param_grad, tiny_model

MNIST_DIR = os.environ.get("SELFPU_MNIST_DIR")


def report(number: int, ok: bool, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
    assert ok, detail


# ------------------------------------------------------------------ 1

def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-300))


def _grad_case(family: str, seed: int):
    """Returns (analytic flat gradient, finite-difference flat gradient)."""
    rng = np.random.default_rng([seed, 1])
    m = tiny_model(seed, dims=(3, 6, 5, 1))
    x = rng.normal(size=(12, 3))
    prior = pl.ClassPrior(float(rng.uniform(0.2, 0.9)))

    if family == "sigmoid":
        y = np.where(rng.uniform(size=12) < 0.5, 1.0, -1.0)
        f = lambda z: float(np.mean(pl.sigmoid_loss(z, y)))
        df = lambda z: pl.sigmoid_loss_grad(z, y) / z.size
    elif family == "cross_entropy":
        q = rng.uniform(size=12)
        f = lambda z: float(np.mean(pl.cross_entropy(z, q)))
        df = lambda z: pl.cross_entropy_grad(z, q) / z.size
    elif family in ("nnpu_unclamped", "nnpu_flipped"):
        z0 = ndnum.forward(m, x)
        order = np.argsort(z0)
        # positives are the highest-scoring rows for the clamped case
        p_idx, u_idx = (order[8:], order[:8]) if family == "nnpu_flipped" else (order[:4], order[4:])
        if family == "nnpu_flipped":
            prior = pl.ClassPrior(0.95)
        r = pl.nnpu_risk(z0[p_idx], z0[u_idx], prior)
        assert r.clamped == (family == "nnpu_flipped")
        sign = -1.0 if r.clamped else 1.0

        def f(z):
            pos, unl, cor = pl._terms(z[p_idx], z[u_idx], np.ones(u_idx.size), prior)
            return pos + sign * (unl - cor)   # the surrogate whose gradient is used

        def df(z):
            gp, gu = pl.nnpu_grad(z[p_idx], z[u_idx], prior, "flip")
            out = np.zeros(z.size)
            out[p_idx], out[u_idx] = gp, gu
            return out
    elif family == "student_mse":
        m2 = tiny_model(seed + 1000, dims=(3, 6, 5, 1))
        out1, out2 = rng.uniform(size=12) < 0.7, rng.uniform(size=12) < 0.7
        z2 = ndnum.forward(m2, x)
        t0 = ds.student_consistency_scores(ndnum.forward(m, x), z2, out1, out2, ds.MiningConfig(2.0))
        p1, p2 = pl.logistic(ndnum.forward(m, x)), pl.logistic(z2)
        mse = (p1 - p2) ** 2
        c = ((out1 & (p1 > 2.0 * mse)).astype(float) + (out2 & (p2 > 2.0 * mse))) / 12
        f = lambda z: float(np.sum(c * (pl.logistic(z) - p2) ** 2))
        df = lambda z: ds.student_consistency_scores(z, z2, out1, out2, ds.MiningConfig(2.0)).dz1
        assert t0.active > 0
    elif family == "teacher_mse":
        zt1 = ndnum.forward(tiny_model(seed + 2000, dims=(3, 6, 5, 1)), x)
        zt2, z2 = rng.normal(size=12), rng.normal(size=12)
        f = lambda z: ds.teacher_consistency_scores(zt1, z, zt2, z2).value
        df = lambda z: ds.teacher_consistency_scores(zt1, z, zt2, z2).dz1
    else:
        raise AssertionError(family)

    z, cache = ndnum.forward(m, x, return_cache=True)
    analytic = ndnum.backward(m, x, df(z), cache).flat()
    numeric = fd_param_grad(m, lambda mm: f(ndnum.forward(mm, x)), h=1e-6)
    return analytic, numeric


FAMILIES = ("sigmoid", "cross_entropy", "nnpu_unclamped", "nnpu_flipped", "student_mse", "teacher_mse")


def test_criterion_1_gradient_oracles():
    t0 = time.perf_counter()
    worst = {}
    for fam in FAMILIES:
        worst[fam] = max(_rel(*_grad_case(fam, s)) for s in range(20))
    elapsed = time.perf_counter() - t0
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(1, ok, f"max rel err over 20 cases/family: {detail}; {elapsed:.1f}s")


# ------------------------------------------------------------------ 2

def test_criterion_2_risk_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    violations = 0
    for _ in range(10_000):
        prior = pl.ClassPrior(float(rng.uniform(0.05, 0.95)))
        p = rng.normal(rng.normal(0, 3), rng.uniform(0.1, 5), rng.integers(1, 20))
        u = rng.normal(rng.normal(0, 3), rng.uniform(0.1, 5), rng.integers(1, 40))
        nn, up = pl.nnpu_risk(p, u, prior), pl.upu_risk(p, u, prior)
        good = nn.total >= 0 and nn.total >= up.total and ((nn.total == up.total) == (not nn.clamped))
        violations += not good
    u = pl.upu_risk([10.0], [-10.0], pl.ClassPrior(0.5)).total
    n = pl.nnpu_risk([10.0], [-10.0], pl.ClassPrior(0.5)).total
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and abs(u - (-0.4999)) < 1e-4 and abs(n - 2.27e-5) < 1e-4 and elapsed < 10
    report(2, ok, f"{violations} violations in 1e4 batches; worked example uPU={u:.6f} nnPU={n:.4e}; {elapsed:.1f}s")


# ------------------------------------------------------------------ 3

def test_criterion_3_unbiasedness():
    t0 = time.perf_counter()
    pi = 0.4
    raw = datapipe.gen_two_gaussians(100_000, mu=1.5, pi_p=pi, seed=3)
    prior = pl.ClassPrior(pi)
    model = ndnum.MlpModel.init([2, 16, 1], np.random.default_rng(33), dtype=np.float64)
    z = ndnum.forward(model, raw.features.astype(np.float64))
    y = raw.targets
    supervised = pi * pl.sigmoid_loss(z[y > 0], 1).mean() + (1 - pi) * pl.sigmoid_loss(z[y < 0], -1).mean()
    rng = np.random.default_rng(4)
    pos = np.flatnonzero(y > 0)
    vals = np.array([pl.upu_risk(z[rng.choice(pos, 100)], z[rng.choice(y.size, 256)], prior).total
                     for _ in range(2000)])
    se = vals.std(ddof=1) / np.sqrt(vals.size)
    gap = abs(vals.mean() - supervised)
    elapsed = time.perf_counter() - t0
    report(3, gap < 3 * se and elapsed < 60,
           f"mean uPU {vals.mean():.5f} vs supervised {supervised:.5f}: gap {gap:.2e} = {gap / se:.2f} SE; "
           f"{elapsed:.1f}s")


# ------------------------------------------------------------------ 4

def _lookahead_fd(model, x_u, val, delta, h=1e-4):
    """Validation loss after one virtual step, differentiated by FD in each
    per-example weight; per-example loss gradients also by FD."""
    x_v, y_v = val
    losses = (pl.prediction_entropy, pl.per_example_unlabeled_risk)
    theta = model.flat().copy()
    out = np.zeros((x_u.shape[0], 2))
    for i in range(x_u.shape[0]):
        for k, fn in enumerate(losses):
            g = fd_param_grad(model, lambda mm: float(fn(ndnum.forward(mm, x_u[i]))), h=1e-6)
            res = []
            for eps in (h, -h):
                model.set_flat(theta - delta * eps * g)   # descend on eps * l_ik
                res.append(mw.validation_loss(model, x_v, y_v))
            model.set_flat(theta)
            out[i, k] = -(res[0] - res[1]) / (2 * h)
    return out


def test_criterion_4_meta_gradient():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng([seed, 4])
        m = tiny_model(seed, dims=(3, 8, 1))
        x_u = rng.normal(size=(8, 3))
        val = (rng.normal(size=(16, 3)), np.where(rng.uniform(size=16) < 0.5, 1, -1))
        u = mw.lookahead_weight_grad(m, x_u, val, mw.ReweightConfig(delta=0.1))
        ref = _lookahead_fd(m, x_u, val, 0.1)
        rel = np.abs(u - ref) / np.maximum(np.abs(ref), 1e-300)
        rel[(u == 0) & (ref == 0)] = 0.0
        worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - t0
    report(4, worst < 1e-3 and elapsed < 60,
           f"max per-entry rel err {worst:.2e} over 10 seeds x 8 examples x 2 losses; {elapsed:.1f}s")


# ------------------------------------------------------------------ 5

def test_criterion_5_selection_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    fails = []
    sched = sp.PaceSchedule(0.2, 10, 50, 10)
    if [sp.target_size(sched, e, 59000) for e in (10, 30, 50)] != [0, 5900, 11800]:
        fails.append("target sizes")
    prev = None
    ids = np.arange(3000)
    for rnd in range(200):
        p = rng.uniform(size=ids.size)
        epoch = 10 + rnd % 41
        size = sp.target_size(sched, epoch, ids.size)
        t = sp.select_from_proba(p, ids, size, epoch, prev)
        if t.capped or len(t) != size or t.n_pos != t.n_neg or size % 2:
            fails.append(f"size/balance at round {rnd}")
        if not np.allclose(t.soft_pos, p[t.ids].astype(np.float32)):
            fails.append("soft labels")
        if prev is not None and len(prev) and len(t):
            dropped = np.setdiff1d(prev.ids, t.ids)
            worst_kept_pos = p[t.ids[t.positive]].min() if t.n_pos else 1.0
            worst_kept_neg = p[t.ids[~t.positive]].max() if t.n_neg else 0.0
            # any evicted example is now less confident than every kept one
            if np.any((p[dropped] > worst_kept_pos) | (p[dropped] < worst_kept_neg)):
                fails.append("eviction")
        snapshot = t.copy()
        prev = t
        # frozen labels: downstream use does not alter them
        sp.sp_objective(rng.normal(size=20), np.r_[True, np.zeros(19, bool)], np.full(20, np.nan),
                        pl.ClassPrior(0.5))
        if snapshot.entries != prev.entries:
            fails.append("immutability")
    cfg = TrainerConfig(dataset="two_gaussians", pi_p=0.5, n_p=100, unlabeled="all", holdout_per_class=50,
                        synth_n=2000, synth_n_test=1000, hidden="8", lr_max=0.01, total_epochs=9,
                        warmup_end=3, selfpaced_end=6, out_dir="unused")
    rows = run_training(cfg, write=False).metrics
    for r in rows:
        e = r["epoch"]
        if e < 3 and (r["trusted1"] or r["trusted2"]):
            fails.append(f"selection before warm-up end at epoch {e}")
        if e < 6 and (r["loss_students"] != 0.0 or r["loss_teachers"] != 0.0):
            fails.append(f"consistency loss before distillation at epoch {e}")
        if e >= 6 and r["loss_teachers"] == 0.0:
            fails.append(f"no teacher loss at epoch {e}")
    elapsed = time.perf_counter() - t0
    report(5, not fails and elapsed < 30,
           f"{'all invariants hold' if not fails else sorted(set(fails))}; {elapsed:.1f}s")


# ------------------------------------------------------------------ 6 and 9

SYNTH = TrainerConfig(dataset="two_gaussians", synth_n=10000, synth_n_test=10000, synth_mu=1.5, pi_p=0.5,
                      n_p=500, unlabeled="all", holdout_per_class=100, hidden="32", lr_max=1e-2,
                      total_epochs=60, warmup_end=3, selfpaced_end=15, out_dir="unused")


def test_criterion_6_synthetic_end_to_end():
    t0 = time.perf_counter()
    nn = np.array([run_training(SYNTH.replace(method="nnpu", seed=s), write=False).test_accuracy
                   for s in range(5)])
    sf = np.array([run_training(SYNTH.replace(method="selfpu", seed=s), write=False).test_accuracy
                   for s in range(5)])
    elapsed = time.perf_counter() - t0
    target = datapipe.bayes_accuracy(1.5) - 0.02
    nn_std, sf_std = nn.std(ddof=1), sf.std(ddof=1)
    ok = (nn.min() >= target and sf.mean() >= nn.mean() - 0.005 and sf_std <= 1.5 * nn_std
          and elapsed < 600)
    report(6, ok, f"nnPU {nn.mean():.4f} ({nn_std:.4f}), min {nn.min():.4f} vs {target:.4f}; "
                  f"Self-PU {sf.mean():.4f} ({sf_std:.4f}); std ratio {sf_std / nn_std:.2f}; {elapsed:.0f}s")


def test_criterion_9_determinism(tmp_path):
    a = SYNTH.replace(out_dir=str(tmp_path / "a"))
    b = SYNTH.replace(out_dir=str(tmp_path / "b"))
    run_training(a)
    run_training(b)
    same = (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()
    report(9, same, "two reference-mode runs give byte-identical metrics.csv" if same
           else "metrics.csv differs between identical runs")


# ------------------------------------------------------------------ 7 and 8 (MNIST, opt-in)

def _mnist_cfg(**kw):
    return TrainerConfig(dataset="mnist", data_dir=MNIST_DIR, out_dir="unused", **kw)


@pytest.mark.extended
@pytest.mark.skipif(not MNIST_DIR, reason="set SELFPU_MNIST_DIR to run the MNIST reproduction")
def test_criterion_7_mnist_reproduction():
    nn = np.array([run_training(_mnist_cfg(method="nnpu", seed=s), write=False).test_accuracy
                   for s in range(3)])
    sf = np.array([run_training(_mnist_cfg(seed=s), write=False).test_accuracy for s in range(3)])
    ok = nn.mean() >= 0.925 and sf.mean() > nn.mean() and sf.mean() >= 0.935
    report(7, ok, f"nnPU {100 * nn.mean():.2f} ({100 * nn.std(ddof=1):.2f}), "
                  f"Self-PU {100 * sf.mean():.2f} ({100 * sf.std(ddof=1):.2f}); reference 93.41 / 94.21")


@pytest.mark.extended
@pytest.mark.skipif(not MNIST_DIR, reason="set SELFPU_MNIST_DIR to run the MNIST reproduction")
def test_criterion_8_trusted_set_quality():
    fails = []
    mean_acc = {}
    for mode in ("dynamic", "fixed_size", "no_replacement"):
        accs = []
        for s in range(3):
            cfg = _mnist_cfg(seed=s, selection_mode=mode, total_epochs=50)
            rows = run_training(cfg, write=False).metrics
            sel = [r for r in rows if 15 <= r["epoch"] < cfg.selfpaced_end]
            for r in sel:
                for k in (1, 2):
                    accs.append(r[f"trusted_acc{k}"])
                    if mode == "dynamic" and not r[f"trusted_acc{k}"] > r[f"unlabeled_acc{k}"]:
                        fails.append(f"seed {s} epoch {r['epoch']} student {k}")
        mean_acc[mode] = float(np.mean(accs))
    ok = (not fails and mean_acc["fixed_size"] < mean_acc["dynamic"]
          and mean_acc["no_replacement"] < mean_acc["dynamic"])
    report(8, ok, f"mean trusted accuracy {mean_acc}; rounds not beating D_U: {fails[:5]}")


def test_criteria_7_8_availability():
    """Prints the status line for the opt-in MNIST criteria when they are skipped."""
    if MNIST_DIR:
        pytest.skip("MNIST criteria run in their own tests")
    print("\n[SKIP] criterion 7: MNIST files not available (set SELFPU_MNIST_DIR)")
    print("[SKIP] criterion 8: MNIST files not available (set SELFPU_MNIST_DIR)")
