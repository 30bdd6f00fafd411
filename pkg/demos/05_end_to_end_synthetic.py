"""Full pipeline on the two-Gaussian task versus the nnPU baseline.

The schedule is compressed to 60 epochs: warm-up for 3, self-paced
selection with reweighting until 15, distillation afterwards. The Bayes
accuracy for mu=1.5 is about 0.933.
"""
import numpy as np

from selfpu import datapipe
from selfpu.harness import TrainerConfig, run_training

cfg = TrainerConfig(dataset="two_gaussians", synth_n=10000, synth_mu=1.5, pi_p=0.5, n_p=500,
                    unlabeled="all", holdout_per_class=100, hidden="32", lr_max=1e-2,
                    total_epochs=60, warmup_end=3, selfpaced_end=15, out_dir="runs/demo05")

print(f"Bayes accuracy {datapipe.bayes_accuracy(1.5):.4f}")
for method in ("nnpu", "selfpu"):
    accs = [run_training(cfg.replace(method=method, seed=s), write=False).test_accuracy for s in range(3)]
    print(f"{method:7s} test accuracy {np.mean(accs):.4f} +/- {np.std(accs, ddof=1):.4f}")

res = run_training(cfg)
last = res.metrics[-1]
print(f"final model {res.final_name}, |trust| = {last['trusted1']}/{last['trusted2']}, "
      f"trusted accuracy {last['trusted_acc1']:.4f}/{last['trusted_acc2']:.4f}")
print("metrics written to", cfg.resolved_out_dir() / "metrics.csv")
