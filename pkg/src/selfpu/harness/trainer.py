"""Phase-scheduled training loop: nnPU warm-up, self-paced learning with
loss reweighting, then two-student / two-teacher distillation."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import datapipe, ndnum
from ..datapipe import MetaValidationSet, PuDataset
from ..distill import (MiningConfig, TeacherState, combine, pick_final_model,
                       student_consistency_scores, teacher_consistency_scores, teacher_update)
from ..errors import ConfigError, NumericError
from ..metaweight import ReweightConfig, meta_weights
from ..selfpace import PaceSchedule, TrustedSet, select_trusted, sp_objective, write_audit
from .checkpoint import TrainState, load_checkpoint, rng_digest, save_checkpoint
from .config import TrainerConfig

log = logging.getLogger(__name__)

METRICS_COLUMNS = [
    "epoch", "phase", "loss", "loss_sp", "loss_students", "loss_teachers",
    "val_acc_s1", "val_acc_s2", "val_acc_t1", "val_acc_t2",
    "trusted1", "trusted2", "trusted_acc1", "trusted_acc2",
    "lr", "wall_seconds", "unlabeled_acc1", "unlabeled_acc2",
]


@dataclass
class TrainingData:
    train: PuDataset
    val: MetaValidationSet | None
    test_x: np.ndarray
    test_y: np.ndarray


@dataclass
class TrainResult:
    final_name: str
    final_model: ndnum.MlpModel
    test_accuracy: float
    val_accuracies: dict
    metrics: list[dict]
    state: TrainState


def evaluate(model: ndnum.MlpModel, features, labels) -> float:
    """Accuracy of ``sign(g(x))`` against +1/-1 labels; a zero score counts as positive."""
    if labels is None:
        raise ConfigError("evaluation needs labelled data")
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ConfigError("evaluation set is empty")
    z = np.concatenate([ndnum.forward(model, features[i:i + 8192]) for i in range(0, len(labels), 8192)])
    return float(np.mean(np.where(z >= 0, 1, -1) == labels))


# --------------------------------------------------------------------------
# data

def load_raw(cfg: TrainerConfig, data_dir=None):
    """Return ``(train RawDataset, test RawDataset, positive_rule)``."""
    seed = cfg.effective_data_seed
    data_dir = Path(data_dir or cfg.data_dir)
    if cfg.dataset == "mnist":
        files = datapipe.find_mnist_files(data_dir)
        return datapipe.load_mnist_idx(*files["train"]), datapipe.load_mnist_idx(*files["test"]), "odd"
    if cfg.dataset == "two_gaussians":
        train = datapipe.gen_two_gaussians(cfg.synth_n, cfg.synth_d, cfg.synth_mu, cfg.pi_p, seed)
        test = datapipe.gen_two_gaussians(cfg.synth_n_test, cfg.synth_d, cfg.synth_mu, cfg.pi_p,
                                          seed + 1_000_003)
        return train, test, "positive"
    train = np.load(data_dir / "train.npz")
    test = np.load(data_dir / "test.npz")
    return (datapipe.RawDataset(train["features"], train["targets"], "two_gaussians"),
            datapipe.RawDataset(test["features"], test["targets"], "two_gaussians"), "positive")


def prepare_data(cfg: TrainerConfig) -> TrainingData:
    raw, test, rule = load_raw(cfg)
    seed = cfg.effective_data_seed
    val = None
    holdout_ids = None
    if cfg.meta_validation == "oracle_holdout":
        val, raw = datapipe.carve_holdout(raw, rule, cfg.holdout_per_class, seed)
        holdout_ids = val.ids
    train = datapipe.make_pu_split(raw, rule, cfg.n_p, seed, cfg.pi_p, cfg.unlabeled, holdout_ids)
    return TrainingData(train, val, test.features, datapipe.oracle_labels(test, rule))


# --------------------------------------------------------------------------
# trainer

def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.8g}"


class Trainer:
    def __init__(self, cfg: TrainerConfig, data: TrainingData | None = None):
        self.cfg = cfg
        self.data = data if data is not None else prepare_data(cfg)
        tr = self.data.train
        self.n = len(tr)
        self.u_ids = tr.u_ids
        self.prior = tr.prior
        self.sched = ndnum.LrSchedule(cfg.lr_max, cfg.lr_min, cfg.total_epochs)
        self.paces = [PaceSchedule(r, cfg.warmup_end, cfg.selfpaced_end, cfg.warmup_end)
                      for r in (cfg.pace1, cfg.pace2)]
        self.mining = MiningConfig(cfg.alpha)
        self.batches = datapipe.BatchIterator(self.n, cfg.batch_size, cfg.seed, stratify=tr.labeled)
        self.estimator = "upu" if cfg.method == "upu" else "nnpu"
        self.layer_dims = [tr.features.shape[1], *cfg.layer_dims_hidden(), 1]
        self.rng_digest = rng_digest(cfg.seed, cfg.effective_data_seed)
        self.state = self.fresh_state()
        self.out_dir = cfg.resolved_out_dir()

    def fresh_state(self) -> TrainState:
        students, adams = [], []
        for k in range(2):
            m = ndnum.MlpModel.init(self.layer_dims, np.random.default_rng([self.cfg.seed, k, 0x1417]))
            students.append(m)
            adams.append(ndnum.AdamState.for_model(m, self.cfg.adam_beta1, self.cfg.adam_beta2, self.cfg.adam_eps))
        return TrainState(0, students, adams, [TrustedSet.empty(), TrustedSet.empty()], None)

    def phase(self, epoch: int) -> str:
        if self.cfg.method != "selfpu" or epoch < self.cfg.warmup_end:
            return "warmup"
        if epoch < self.cfg.selfpaced_end:
            return "selfpaced"
        return "distill"

    # ------------------------------------------------------------------
    def _val_batch(self, epoch: int, b: int, k: int):
        rng = np.random.default_rng([self.cfg.seed, epoch, b, k, 0x7A1])
        m = self.cfg.batch_size
        if self.cfg.meta_validation == "oracle_holdout":
            idx = rng.choice(len(self.data.val), size=min(m, len(self.data.val)), replace=False)
            return self.data.val.features[idx], self.data.val.labels[idx]
        return self._bootstrap_set(k, m, rng)

    def _bootstrap_set(self, k: int, m: int | None = None, rng=None):
        """Labelled positives plus the most confident trusted negatives."""
        tr = self.data.train
        t = self.state.trusted[k]
        neg = t.ids[~t.positive]
        if neg.size == 0:
            return None
        neg = neg[np.argsort(t.soft_pos[~t.positive], kind="stable")]
        p_ids = tr.p_ids
        half = (m or 2 * min(p_ids.size, neg.size)) // 2
        half = max(1, min(half, p_ids.size, neg.size))
        pos = rng.choice(p_ids, half, replace=False) if rng is not None else p_ids[:half]
        ids = np.concatenate([pos, neg[:half]])
        labels = np.concatenate([np.ones(half, np.int8), -np.ones(half, np.int8)])
        return tr.features[ids], labels

    def validation_set(self) -> MetaValidationSet | None:
        if self.cfg.meta_validation == "oracle_holdout":
            return self.data.val
        got = self._bootstrap_set(0)
        if got is None:
            return None
        return MetaValidationSet(got[0], got[1], "trusted_bootstrap")

    # ------------------------------------------------------------------
    def run_epoch(self, epoch: int) -> dict:
        cfg, st = self.cfg, self.state
        t0 = time.perf_counter()
        lr = ndnum.cosine_lr(self.sched, epoch)
        phase = self.phase(epoch)
        tr = self.data.train
        feats, labeled = tr.features, tr.labeled
        if phase == "distill" and st.teachers is None:
            st.teachers = [TeacherState.from_student(s, cfg.beta, cfg.teacher_mode) for s in st.students]
        soft_all = [t.soft_label_array(self.n) for t in st.trusted]
        rw_cfg = ReweightConfig(cfg.delta if cfg.delta is not None else lr, cfg.gamma, cfg.batch_size)
        reweight = phase != "warmup" and cfg.use_reweight
        totals = np.zeros(4)
        n_batches = 0
        for b, idx in enumerate(self.batches.order(epoch)):
            x = feats[idx]
            lab = labeled[idx]
            fw = [ndnum.forward(s, x, return_cache=True) for s in st.students]
            zs = [np.asarray(f[0], dtype=np.float64) for f in fw]
            sps = []
            for k in range(2):
                soft = soft_all[k][idx]
                kw = {}
                if reweight:
                    rest = np.isnan(soft) & ~lab
                    val_batch = self._val_batch(epoch, b, k)
                    if val_batch is not None and rest.any():
                        w = meta_weights(st.students[k], x[rest], zs[k][rest], val_batch, rw_cfg)
                        kw = dict(u_weights=w.w_star[:, 1], entropy_weights=w.w_star[:, 0])
                sps.append(sp_objective(zs[k], lab, soft, self.prior, self.estimator, cfg.grad_mode, **kw))
            stu = tea = None
            if phase == "distill":
                if cfg.use_students:
                    stu = student_consistency_scores(zs[0], zs[1], np.isnan(soft_all[0][idx]),
                                                     np.isnan(soft_all[1][idx]), self.mining)
                if cfg.use_teachers:
                    zt = [ndnum.forward(t.theta_bar, x) for t in st.teachers]
                    tea = teacher_consistency_scores(zt[0], zs[0], zt[1], zs[1])
            terms = combine(sps[0], sps[1], stu, tea)
            if not np.isfinite(terms.value):
                self._abort(epoch, f"non-finite loss {terms.value} at epoch {epoch}, batch {b}")
            for k, dz in enumerate((terms.dz1, terms.dz2)):
                g = ndnum.backward(st.students[k], x, dz, fw[k][1])
                try:
                    ndnum.adam_step(st.students[k], g, st.adams[k], lr, cfg.weight_decay)
                except NumericError as exc:
                    self._abort(epoch, f"student {k + 1}: {exc}")
            if phase == "distill" and cfg.teacher_cadence == "per_step":
                for t, s in zip(st.teachers, st.students):
                    teacher_update(t, s)
            totals += (terms.value, terms.sp, terms.students, terms.teachers)
            n_batches += 1

        if phase == "selfpaced":
            for k in range(2):
                st.trusted[k] = select_trusted(st.students[k], feats[self.u_ids], self.u_ids, self.paces[k],
                                               epoch + 1, st.trusted[k], cfg.selection_mode, cfg.soft_labels)
            if cfg.audit:
                self._audit(epoch)
        if phase == "distill" and cfg.teacher_cadence == "per_epoch":
            for t, s in zip(st.teachers, st.students):
                teacher_update(t, s)
        st.epoch = epoch + 1

        means = totals / max(n_batches, 1)
        row = {"epoch": epoch, "phase": phase, "loss": means[0], "loss_sp": means[1],
               "loss_students": means[2], "loss_teachers": means[3]}
        row.update(self._evaluate_epoch())
        row["lr"] = lr
        row["wall_seconds"] = time.perf_counter() - t0 if cfg.log_wallclock else 0.0
        return row

    def _evaluate_epoch(self) -> dict:
        st, tr = self.state, self.data.train
        out = {}
        val = self.validation_set()
        models = {"s1": st.students[0], "s2": st.students[1]}
        if st.teachers is not None:
            models.update(t1=st.teachers[0].theta_bar, t2=st.teachers[1].theta_bar)
        for name in ("s1", "s2", "t1", "t2"):
            ok = val is not None and name in models
            out[f"val_acc_{name}"] = evaluate(models[name], val.features, val.labels) if ok else float("nan")
        for k in range(2):
            out[f"trusted{k + 1}"] = len(st.trusted[k])
            out[f"trusted_acc{k + 1}"] = (st.trusted[k].accuracy(tr.oracle)
                                          if tr.oracle is not None else float("nan"))
            out[f"unlabeled_acc{k + 1}"] = (evaluate(st.students[k], tr.features[self.u_ids], tr.oracle[self.u_ids])
                                            if tr.oracle is not None else float("nan"))
        return out

    def _audit(self, epoch: int) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        for k in range(2):
            with open(self.out_dir / f"trusted{k + 1}_audit.csv", "a") as fh:
                write_audit(fh, self.state.trusted[k], epoch, self.data.train.oracle)

    def _abort(self, epoch: int, msg: str):
        path = self.out_dir / "diagnostic.ckpt"
        try:
            self.save(path)
        finally:
            raise NumericError(f"{msg}; diagnostic checkpoint at {path}")

    # ------------------------------------------------------------------
    def save(self, path, final: str | None = None) -> None:
        self.state.meta = {"final": final} if final else {}
        save_checkpoint(path, self.state, self.cfg.to_text(), self.rng_digest)

    def resume(self, path) -> None:
        state, header = load_checkpoint(path)
        if header.get("rng_digest") != self.rng_digest:
            raise ConfigError(f"{path}: checkpoint was written with different seeds")
        if state.students[0].layer_dims != self.layer_dims:
            raise ConfigError(f"{path}: checkpoint architecture {state.students[0].layer_dims} "
                              f"does not match {self.layer_dims}")
        self.state = state

    def choose_final(self):
        st = self.state
        val = self.validation_set()
        if st.teachers is not None and val is not None:
            idx, teacher, accs = pick_final_model(st.teachers, val)
            return f"t{idx + 1}", teacher.theta_bar, {"t1": accs[0], "t2": accs[1]}
        return "s1", st.students[0], {}

    def run(self, write: bool = True, stop_at: int | None = None) -> TrainResult:
        """Train from ``state.epoch`` to ``total_epochs`` (or ``stop_at``)."""
        cfg = self.cfg
        end = cfg.total_epochs if stop_at is None else min(stop_at, cfg.total_epochs)
        rows = []
        metrics_fh = None
        if write:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            metrics_fh = open(self.out_dir / "metrics.csv", "w", newline="")
            metrics_fh.write(",".join(METRICS_COLUMNS) + "\n")
            datapipe.write_manifest(self.out_dir / "split_manifest.txt",
                                    {**self.data.train.manifest, "meta_validation": cfg.meta_validation,
                                     "model_selection_set": cfg.meta_validation})
            (self.out_dir / "config.txt").write_text(cfg.to_text())
        try:
            for epoch in range(self.state.epoch, end):
                row = self.run_epoch(epoch)
                rows.append(row)
                log.info("epoch %d %s loss=%.5f val_s1=%.4f", epoch, row["phase"], row["loss"],
                         row["val_acc_s1"])
                if metrics_fh is not None:
                    metrics_fh.write(",".join(_fmt(row[c]) for c in METRICS_COLUMNS) + "\n")
                    metrics_fh.flush()
                if write and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                    self.save(self.out_dir / f"epoch{epoch + 1:04d}.ckpt")
        finally:
            if metrics_fh is not None:
                metrics_fh.close()
        name, model, val_accs = self.choose_final()
        acc = evaluate(model, self.data.test_x, self.data.test_y)
        if write:
            self.save(self.out_dir / "final.ckpt", final=name)
            lines = [f"final_model={name}", f"test_accuracy={acc:.6f}"]
            lines += [f"val_acc_{k}={v:.6f}" for k, v in val_accs.items()]
            (self.out_dir / "result.txt").write_text("\n".join(lines) + "\n")
        return TrainResult(name, model, acc, val_accs, rows, self.state)


def run_training(cfg: TrainerConfig, data: TrainingData | None = None, resume=None,
                 write: bool = True) -> TrainResult:
    trainer = Trainer(cfg, data)
    if resume is not None:
        trainer.resume(resume)
    return trainer.run(write=write)


def metrics_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(",".join(METRICS_COLUMNS) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(row[c]) for c in METRICS_COLUMNS) + "\n")
    return buf.getvalue()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
