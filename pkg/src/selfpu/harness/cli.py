"""Command-line entry point: ``train``, ``eval``, ``synth`` and ``sweep``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .. import datapipe
from ..errors import SelfPUError
from .checkpoint import load_checkpoint
from .config import TrainerConfig
from .trainer import evaluate, load_raw, run_training


def cmd_train(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    cfg = TrainerConfig.from_file(args.config, **overrides)
    res = run_training(cfg, resume=args.resume)
    print(f"final_model={res.final_name} test_accuracy={res.test_accuracy:.6f} "
          f"out={cfg.resolved_out_dir()}")
    return 0


def cmd_eval(args) -> int:
    state, header = load_checkpoint(args.checkpoint)
    cfg = TrainerConfig.from_text(header["config"])
    if args.dataset != cfg.dataset:
        cfg = cfg.replace(dataset=args.dataset)
    _, test, rule = load_raw(cfg, args.data_dir)
    labels = datapipe.oracle_labels(test, rule)
    final = state.meta.get("final", "s1")
    models = {"s1": state.students[0], "s2": state.students[1]}
    if state.teachers is not None:
        models.update(t1=state.teachers[0].theta_bar, t2=state.teachers[1].theta_bar)
    for name, model in models.items():
        tag = " (final)" if name == final else ""
        print(f"{name}{tag} test_accuracy={evaluate(model, test.features, labels):.6f}")
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train = datapipe.gen_two_gaussians(args.n, args.d, args.mu, args.pi_p, args.seed)
    test = datapipe.gen_two_gaussians(args.n_test, args.d, args.mu, args.pi_p, args.seed + 1_000_003)
    np.savez(out / "train.npz", features=train.features, targets=train.targets)
    np.savez(out / "test.npz", features=test.features, targets=test.targets)
    datapipe.write_manifest(out / "manifest.txt", {
        "dataset": "two_gaussians", "n": args.n, "n_test": args.n_test, "d": args.d, "mu": args.mu,
        "pi_p": args.pi_p, "seed": args.seed, "bayes_accuracy": f"{datapipe.bayes_accuracy(args.mu):.6f}"})
    print(f"wrote {out}/train.npz, test.npz, manifest.txt")
    return 0


def cmd_sweep(args) -> int:
    base = TrainerConfig.from_file(args.config)
    root = Path(args.out) if args.out else base.resolved_out_dir()
    accs = []
    for s in range(base.seed, base.seed + args.seeds):
        res = run_training(base.replace(seed=s, out_dir=str(root / f"seed{s}")))
        accs.append(res.test_accuracy)
        print(f"seed={s} final_model={res.final_name} test_accuracy={res.test_accuracy:.6f}")
    accs = np.array(accs)
    std = float(accs.std(ddof=1)) if accs.size > 1 else 0.0
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "summary.csv", "w") as fh:
        fh.write("seed,test_accuracy\n")
        for s, a in zip(range(base.seed, base.seed + args.seeds), accs):
            fh.write(f"{s},{a:.6f}\n")
        fh.write(f"mean,{accs.mean():.6f}\nstd,{std:.6f}\n")
    print(f"mean={accs.mean():.6f} std={std:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="selfpu", description="Self-paced PU learning trainer")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--resume", help="continue from a checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True, choices=["mnist", "two_gaussians", "synthetic_dir"])
    p.add_argument("--data-dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a two-Gaussian dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--pi-p", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--n-test", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", help="train over consecutive seeds and summarise")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SelfPUError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
