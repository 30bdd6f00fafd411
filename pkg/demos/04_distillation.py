"""Two students, two moving-average teachers.

The student consistency term only acts on examples outside each student's
trusted set where the unlabeled surrogate dominates `alpha` times the
squared disagreement. Teachers track their student's recent weights.
"""
import numpy as np

from selfpu import distill, ndnum

rng = np.random.default_rng(0)
s1 = ndnum.MlpModel.init([2, 8, 1], np.random.default_rng(1), dtype=np.float64)
s2 = ndnum.MlpModel.init([2, 8, 1], np.random.default_rng(2), dtype=np.float64)
x = rng.normal(size=(64, 2))
z1, z2 = ndnum.forward(s1, x), ndnum.forward(s2, x)
outside = rng.uniform(size=64) < 0.8

for alpha in (1.0, 10.0, 100.0):
    t = distill.student_consistency_scores(z1, z2, outside, outside, distill.MiningConfig(alpha))
    print(f"alpha={alpha:5.0f}: active gates {t.active:3d}, loss {t.value:.5f}")

teacher = distill.TeacherState.from_student(s1, beta=0.3)
ema = distill.TeacherState.from_student(s1, beta=0.3, mode="ema_recursive")
for step in range(3):
    for w in s1.weights:
        w += 0.1 * rng.normal(size=w.shape)
    distill.teacher_update(teacher, s1)
    distill.teacher_update(ema, s1)
    gap = np.linalg.norm(teacher.theta_bar.flat() - s1.flat())
    gap_ema = np.linalg.norm(ema.theta_bar.flat() - s1.flat())
    print(f"step {step}: |teacher - student| two-step {gap:.3f}, recursive {gap_ema:.3f}")
