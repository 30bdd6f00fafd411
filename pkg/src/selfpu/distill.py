"""Two-student mutual consistency with hard-sample mining, moving-average
teachers, teacher distillation, and the combined training objective."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import ndnum
from .datapipe import Batch, MetaValidationSet
from .errors import ConfigError, ScheduleError, ShapeError
from .pulosses import ClassPrior, logistic
from .selfpace import PaceSchedule, SpTerms, TrustedSet, sp_objective

TEACHER_MODES = ("two_step_literal", "ema_recursive")


@dataclass(frozen=True)
class MiningConfig:
    alpha: float = 10.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")


@dataclass
class StudentPair:
    students: list[ndnum.MlpModel]
    optimizers: list[ndnum.AdamState]
    paces: list[PaceSchedule]
    trusted: list[TrustedSet] = field(default_factory=lambda: [TrustedSet.empty(), TrustedSet.empty()])

    def __post_init__(self):
        if len(self.students) != 2:
            raise ConfigError("a student pair has exactly two students")
        if self.students[0].layer_dims != self.students[1].layer_dims:
            raise ShapeError("students must share the same architecture")


@dataclass
class TeacherState:
    theta_bar: ndnum.MlpModel
    beta: float = 0.3
    mode: str = "two_step_literal"
    prev_student: ndnum.MlpModel | None = None

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError("beta must lie in [0, 1)")
        if self.mode not in TEACHER_MODES:
            raise ConfigError(f"teacher mode must be one of {TEACHER_MODES}")

    @classmethod
    def from_student(cls, student: ndnum.MlpModel, beta: float = 0.3,
                     mode: str = "two_step_literal") -> "TeacherState":
        return cls(student.copy(), beta, mode, student.copy() if mode == "two_step_literal" else None)


def teacher_update(teacher: TeacherState, student: ndnum.MlpModel) -> TeacherState:
    """One moving-average tick, in place.

    ``two_step_literal`` blends the previous and current *student* weights;
    ``ema_recursive`` blends the previous *teacher* weights with the current
    student. Without a previous student snapshot the teacher is set to the
    current student.
    """
    if teacher.theta_bar.layer_dims != student.layer_dims:
        raise ShapeError("teacher and student architectures differ")
    b = teacher.beta
    if teacher.mode == "two_step_literal":
        if teacher.prev_student is None:
            for t, s in zip(teacher.theta_bar.arrays(), student.arrays()):
                t[...] = s
        else:
            for t, prev, s in zip(teacher.theta_bar.arrays(), teacher.prev_student.arrays(), student.arrays()):
                t[...] = b * prev + (1.0 - b) * s
        teacher.prev_student = student.copy()
    else:
        for t, s in zip(teacher.theta_bar.arrays(), student.arrays()):
            t[...] = b * t + (1.0 - b) * s
    return teacher


class ConsistencyTerms(NamedTuple):
    value: float
    dz1: np.ndarray
    dz2: np.ndarray
    active: int = 0


def student_consistency_scores(z1, z2, out1, out2, mining: MiningConfig) -> ConsistencyTerms:
    """Gated squared difference of the two students' probabilities.

    ``out1`` / ``out2`` flag the rows outside each student's trusted set.
    A row contributes in direction k only when student k's unlabeled
    surrogate ``logistic(z_k)`` exceeds ``alpha`` times the squared gap; the
    gate is a constant mask. The batch sum is divided by the batch size.
    """
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise ShapeError("student score vectors differ in shape")
    n = max(z1.size, 1)
    p1, p2 = logistic(z1), logistic(z2)
    mse = (p1 - p2) ** 2
    g1 = np.asarray(out1, bool) & (p1 > mining.alpha * mse)
    g2 = np.asarray(out2, bool) & (p2 > mining.alpha * mse)
    c = (g1.astype(np.float64) + g2) / n
    value = float(np.sum(c * mse))
    diff = 2.0 * (p1 - p2) * c
    return ConsistencyTerms(value, diff * p1 * (1 - p1), -diff * p2 * (1 - p2), int(g1.sum() + g2.sum()))


def teacher_consistency_scores(zt1, z1, zt2, z2) -> ConsistencyTerms:
    """Mean squared gap between each teacher's and its student's
    probabilities over the whole batch; teachers are constants."""
    pt1, pt2 = logistic(np.asarray(zt1, np.float64)), logistic(np.asarray(zt2, np.float64))
    p1, p2 = logistic(np.asarray(z1, np.float64)), logistic(np.asarray(z2, np.float64))
    n = max(p1.size, 1)
    value = float(np.sum((pt1 - p1) ** 2) + np.sum((pt2 - p2) ** 2)) / n
    dz1 = -2.0 * (pt1 - p1) * p1 * (1 - p1) / n
    dz2 = -2.0 * (pt2 - p2) * p2 * (1 - p2) / n
    return ConsistencyTerms(value, dz1, dz2, int(p1.size))


def student_consistency(pair: StudentPair, batch: Batch, mining: MiningConfig, n_total: int):
    """Model-level mutual term; returns ``(value, (grads1, grads2))``."""
    (z1, c1), (z2, c2) = (ndnum.forward(s, batch.features, return_cache=True) for s in pair.students)
    out1 = np.isnan(pair.trusted[0].soft_label_array(n_total)[batch.ids])
    out2 = np.isnan(pair.trusted[1].soft_label_array(n_total)[batch.ids])
    t = student_consistency_scores(z1, z2, out1, out2, mining)
    return t.value, (ndnum.backward(pair.students[0], batch.features, t.dz1, c1),
                     ndnum.backward(pair.students[1], batch.features, t.dz2, c2))


def teacher_consistency(pair: StudentPair, teachers, batch: Batch):
    """Model-level teacher term; gradients reach the students only."""
    zt = [ndnum.forward(t.theta_bar, batch.features) for t in teachers]
    (z1, c1), (z2, c2) = (ndnum.forward(s, batch.features, return_cache=True) for s in pair.students)
    t = teacher_consistency_scores(zt[0], z1, zt[1], z2)
    return t.value, (ndnum.backward(pair.students[0], batch.features, t.dz1, c1),
                     ndnum.backward(pair.students[1], batch.features, t.dz2, c2))


class TotalTerms(NamedTuple):
    value: float
    sp: float
    students: float
    teachers: float
    dz1: np.ndarray
    dz2: np.ndarray


def combine(sp1: SpTerms, sp2: SpTerms, stu: ConsistencyTerms | None,
            tea: ConsistencyTerms | None) -> TotalTerms:
    """Add per-student self-paced terms and the two consistency terms."""
    dz1, dz2 = sp1.dz.copy(), sp2.dz.copy()
    s_val = t_val = 0.0
    if stu is not None:
        s_val = stu.value
        dz1 += stu.dz1
        dz2 += stu.dz2
    if tea is not None:
        t_val = tea.value
        dz1 += tea.dz1
        dz2 += tea.dz2
    sp = sp1.value + sp2.value
    return TotalTerms(sp + s_val + t_val, sp, s_val, t_val, dz1, dz2)


def total_loss(pair: StudentPair, teachers, batch: Batch, prior: ClassPrior, mining: MiningConfig,
               n_total: int, weights=None, phase: str = "distill", use_students: bool = True,
               use_teachers: bool = True, **sp_kwargs):
    """Full objective on one batch during the distillation phase.

    ``weights`` optionally holds a :class:`~selfpu.metaweight.BatchWeights`
    per student for that student's untrusted unlabeled rows. Returns
    ``(TotalTerms, (grads1, grads2))``.
    """
    if phase != "distill":
        raise ScheduleError(f"the combined objective belongs to the distillation phase, not {phase!r}")
    fw = [ndnum.forward(s, batch.features, return_cache=True) for s in pair.students]
    zs = [f[0] for f in fw]
    soft = [tr.soft_label_array(n_total)[batch.ids] for tr in pair.trusted]
    sps = []
    for k in range(2):
        kw = dict(sp_kwargs)
        if weights is not None and weights[k] is not None:
            kw.update(u_weights=weights[k].w_star[:, 1], entropy_weights=weights[k].w_star[:, 0])
        sps.append(sp_objective(zs[k], batch.labeled, soft[k], prior, **kw))
    stu = tea = None
    if use_students:
        stu = student_consistency_scores(zs[0], zs[1], np.isnan(soft[0]), np.isnan(soft[1]), mining)
    if use_teachers:
        zt = [ndnum.forward(t.theta_bar, batch.features) for t in teachers]
        tea = teacher_consistency_scores(zt[0], zs[0], zt[1], zs[1])
    terms = combine(sps[0], sps[1], stu, tea)
    grads = tuple(ndnum.backward(pair.students[k], batch.features, dz, fw[k][1])
                  for k, dz in enumerate((terms.dz1, terms.dz2)))
    return terms, grads


def pick_final_model(teachers, val: MetaValidationSet):
    """Index, teacher and both validation accuracies; ties go to teacher 1."""
    if len(val) == 0:
        raise ConfigError("validation set is empty")
    accs = []
    for t in teachers:
        model = t.theta_bar if isinstance(t, TeacherState) else t
        z = ndnum.forward(model, val.features)
        accs.append(float(np.mean(np.where(z >= 0, 1, -1) == val.labels)))
    idx = 0 if accs[0] >= accs[1] else 1
    return idx, teachers[idx], accs
