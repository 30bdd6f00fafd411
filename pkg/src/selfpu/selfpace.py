"""Self-paced trusted-set mining and the hybrid self-paced loss.

The trusted set is rebuilt from scratch at every selection round: the most
confident predicted positives and predicted negatives of the unlabeled pool,
in equal numbers, each carrying the prediction at selection time as a frozen
soft label. Examples that no longer rank inside the cut drop back to the
unlabeled pool.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import ndnum
from .datapipe import Batch
from .errors import BatchCompositionError, PartitionError, ScheduleError
from .pulosses import (ClassPrior, RiskBreakdown, cross_entropy, cross_entropy_grad, logistic,
                       prediction_entropy, prediction_entropy_grad, risk_and_grad)

log = logging.getLogger(__name__)

SELECTION_MODES = ("dynamic", "fixed_size", "no_replacement")


@dataclass(frozen=True)
class PaceSchedule:
    r_final: float = 0.2
    epoch_start: int = 10
    epoch_end: int = 50
    warmup_epochs: int = 10

    def __post_init__(self):
        if not 0.0 < self.r_final <= 1.0:
            raise ScheduleError(f"r_final must be in (0, 1], got {self.r_final}")
        if self.epoch_start < self.warmup_epochs or self.epoch_end <= self.epoch_start:
            raise ScheduleError(f"inconsistent pace schedule {self}")


def _even(k: int) -> int:
    return k - (k % 2)


def target_size(sched: PaceSchedule, epoch: int, n_u: int) -> int:
    """Trusted-set size at ``epoch``: linear from 0 to ``r_final * n_u``, kept even."""
    if not sched.epoch_start <= epoch <= sched.epoch_end:
        raise ScheduleError(f"epoch {epoch} outside the self-paced phase "
                            f"[{sched.epoch_start}, {sched.epoch_end}]")
    frac = (epoch - sched.epoch_start) / (sched.epoch_end - sched.epoch_start)
    return _even(int(round(sched.r_final * n_u * frac)))


@dataclass
class TrustedSet:
    """Parallel arrays, one entry per trusted unlabeled example."""

    ids: np.ndarray            # int64 row ids into the training set
    soft_pos: np.ndarray       # P(Y=+1) soft label, frozen at selection
    positive: np.ndarray       # polarity, True = trusted positive
    selected_at: np.ndarray    # epoch of the selection that created the entry
    capacity_target: int = 0
    capped: bool = False

    @classmethod
    def empty(cls) -> "TrustedSet":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.float32), np.zeros(0, bool), np.zeros(0, np.int64))

    def __len__(self):
        return self.ids.size

    def __contains__(self, i) -> bool:
        return bool(np.any(self.ids == i))

    @property
    def n_pos(self) -> int:
        return int(self.positive.sum())

    @property
    def n_neg(self) -> int:
        return int((~self.positive).sum())

    @property
    def entries(self) -> dict:
        return {int(i): (float(q), int(e), "pos" if s else "neg")
                for i, q, s, e in zip(self.ids, self.soft_pos, self.positive, self.selected_at)}

    def soft_label_array(self, n: int) -> np.ndarray:
        """Length-``n`` array of soft labels, NaN for untrusted rows."""
        out = np.full(n, np.nan, dtype=np.float32)
        out[self.ids] = self.soft_pos
        return out

    def accuracy(self, oracle: np.ndarray) -> float:
        """Fraction of entries whose polarity matches the oracle label."""
        if not len(self):
            return float("nan")
        return float(np.mean((oracle[self.ids] == 1) == self.positive))

    def copy(self) -> "TrustedSet":
        return TrustedSet(self.ids.copy(), self.soft_pos.copy(), self.positive.copy(),
                          self.selected_at.copy(), self.capacity_target, self.capped)


def predict_proba(model: ndnum.MlpModel, features: np.ndarray, chunk: int = 8192) -> np.ndarray:
    out = np.empty(features.shape[0], dtype=np.float64)
    for i in range(0, features.shape[0], chunk):
        out[i:i + chunk] = logistic(ndnum.forward(model, features[i:i + chunk]).astype(np.float64))
    return out


def _pick(p, ids, k, positive, exclude=None):
    """Top-``k`` ids by confidence for one polarity, ties by ascending id."""
    cand = p >= 0.5 if positive else p < 0.5
    if exclude is not None:
        cand &= ~exclude
    idx = np.flatnonzero(cand)
    key = -p[idx] if positive else p[idx]
    order = np.lexsort((ids[idx], key))
    return idx[order[:k]]


def select_from_proba(p: np.ndarray, ids: np.ndarray, size: int, epoch: int,
                      previous: TrustedSet | None = None, mode: str = "dynamic",
                      soft: bool = True) -> TrustedSet:
    """Selection on precomputed probabilities ``p`` for the pool rows ``ids``."""
    if mode not in SELECTION_MODES:
        raise ValueError(f"selection mode must be one of {SELECTION_MODES}")
    ids = np.asarray(ids, dtype=np.int64)
    half = size // 2
    keep = None
    if mode == "no_replacement" and previous is not None and len(previous):
        keep = previous
        exclude = np.isin(ids, previous.ids)
        need_pos = max(0, half - previous.n_pos)
        need_neg = max(0, half - previous.n_neg)
    else:
        exclude = None
        need_pos = need_neg = half
    free = np.ones(p.size, bool) if exclude is None else ~exclude
    avail_pos = int(np.sum((p >= 0.5) & free))
    avail_neg = int(np.sum((p < 0.5) & free))
    capped = False
    if need_pos > avail_pos or need_neg > avail_neg:
        capped = True
        k = min(need_pos, need_neg, avail_pos, avail_neg)
        log.warning("epoch %d: trusted target %d exceeds confident pool (%d pos / %d neg); capped",
                    epoch, size, avail_pos, avail_neg)
        need_pos = need_neg = k
    pos_idx = _pick(p, ids, need_pos, True, exclude)
    neg_idx = _pick(p, ids, need_neg, False, exclude)
    sel = np.concatenate([pos_idx, neg_idx])
    if soft:
        labels = p[sel].astype(np.float32)
    else:
        labels = np.concatenate([np.ones(pos_idx.size), np.zeros(neg_idx.size)]).astype(np.float32)
    new = TrustedSet(ids[sel], labels,
                     np.concatenate([np.ones(pos_idx.size, bool), np.zeros(neg_idx.size, bool)]),
                     np.full(sel.size, epoch, dtype=np.int64), size, capped)
    if keep is not None:
        new = TrustedSet(np.concatenate([keep.ids, new.ids]), np.concatenate([keep.soft_pos, new.soft_pos]),
                         np.concatenate([keep.positive, new.positive]),
                         np.concatenate([keep.selected_at, new.selected_at]), size, capped)
    return new


def select_trusted(model: ndnum.MlpModel, features_u: np.ndarray, ids_u: np.ndarray,
                   sched: PaceSchedule, epoch: int, previous: TrustedSet | None = None,
                   mode: str = "dynamic", soft: bool = True) -> TrustedSet:
    """Run one selection round over the unlabeled pool.

    ``mode="fixed_size"`` selects the final size every round, and
    ``"no_replacement"`` keeps earlier entries and only tops the set up;
    both exist for ablations.
    """
    if ids_u.size == 0:
        raise BatchCompositionError("unlabeled pool is empty")
    n_u = ids_u.size
    if mode == "fixed_size":
        size = _even(int(round(sched.r_final * n_u)))
    else:
        size = target_size(sched, epoch, n_u)
    if size == 0 and mode != "no_replacement":
        return TrustedSet.empty()
    p = predict_proba(model, features_u)
    return select_from_proba(p, ids_u, size, epoch, previous, mode, soft)


def write_audit(fh, trusted: TrustedSet, epoch: int, oracle: np.ndarray | None = None) -> None:
    """One line per entry: ``epoch,id,polarity,soft_label_pos,oracle``."""
    for i, q, s in zip(trusted.ids, trusted.soft_pos, trusted.positive):
        o = "" if oracle is None else str(int(oracle[i]))
        fh.write(f"{epoch},{int(i)},{'pos' if s else 'neg'},{float(q):.6f},{o}\n")


class SpTerms(NamedTuple):
    value: float
    ce_term: float
    entropy_term: float
    pu: RiskBreakdown | None
    dz: np.ndarray


def sp_objective(z, labeled, soft, prior: ClassPrior, estimator: str = "nnpu",
                 grad_mode: str = "flip", u_weights=None, entropy_weights=None) -> SpTerms:
    """Hybrid self-paced objective on the scores of one batch.

    ``soft`` holds the frozen soft label for trusted rows and NaN elsewhere.
    The trusted cross-entropy is summed and divided by the batch size; the
    PU risk covers the labeled positives and the untrusted unlabeled rows.
    ``u_weights`` / ``entropy_weights`` (one per untrusted unlabeled row,
    in batch order) switch on the reweighted variant: the PU term's
    unlabeled part is weighted and a weighted mean prediction entropy is
    added.
    """
    z = np.asarray(z, dtype=np.float64)
    labeled = np.asarray(labeled, dtype=bool)
    soft = np.asarray(soft, dtype=np.float64)
    n = z.size
    trusted = ~np.isnan(soft)
    if np.any(trusted & labeled):
        raise PartitionError("a labeled positive is also marked as trusted")
    rest = ~trusted & ~labeled
    if not labeled.any():
        raise BatchCompositionError("batch contains no labeled positives")
    dz = np.zeros(n)

    ce_vals = cross_entropy(z[trusted], soft[trusted])
    ce_term = float(np.sum(ce_vals)) / n
    dz[trusted] = cross_entropy_grad(z[trusted], soft[trusted]) / n

    pu = None
    ent_term = 0.0
    p_idx = np.flatnonzero(labeled)
    r_idx = np.flatnonzero(rest)
    if r_idx.size:
        pu, gp, gu = risk_and_grad(z[p_idx], z[r_idx], prior, estimator, grad_mode, u_weights)
        pu_value = pu.total
        dz[p_idx] += gp
        dz[r_idx] += gu
        if entropy_weights is not None:
            ew = np.asarray(entropy_weights, dtype=np.float64)
            ent_term = float(np.sum(ew * prediction_entropy(z[r_idx]))) / r_idx.size
            dz[r_idx] += ew * prediction_entropy_grad(z[r_idx]) / r_idx.size
    else:
        # every unlabeled row trusted: only the positive-risk part survives
        s = logistic(-z[p_idx])
        pu_value = prior.pi_p * float(np.mean(s))
        dz[p_idx] += -prior.pi_p * s * (1 - s) / p_idx.size
    return SpTerms(ce_term + pu_value + ent_term, ce_term, ent_term, pu, dz)


def sp_loss(model: ndnum.MlpModel, trusted: TrustedSet, batch: Batch, prior: ClassPrior,
            n_total: int | None = None, **kwargs):
    """Model-level hybrid loss on one batch; returns ``(value, Gradients)``."""
    n_total = n_total if n_total is not None else int(max(batch.ids.max(), trusted.ids.max(initial=-1))) + 1
    soft = trusted.soft_label_array(n_total)[batch.ids]
    z, cache = ndnum.forward(model, batch.features, return_cache=True)
    terms = sp_objective(z, batch.labeled, soft, prior, **kwargs)
    return terms.value, ndnum.backward(model, batch.features, terms.dz, cache)

