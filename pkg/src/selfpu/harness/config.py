"""Trainer configuration and its flat ``key=value`` file format."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from ..errors import ConfigError

OUT_DIR_ENV = "SELFPU_OUT_DIR"

DATASETS = ("mnist", "two_gaussians", "synthetic_dir")
METHODS = ("selfpu", "nnpu", "upu")


@dataclass
class TrainerConfig:
    # data
    dataset: str = "mnist"
    data_dir: str = "data/mnist"
    pi_p: float = 0.49
    n_p: int = 1000
    unlabeled: str = "remaining"
    holdout_per_class: int = 250
    synth_n: int = 10000
    synth_n_test: int = 10000
    synth_mu: float = 1.5
    synth_d: int = 2
    data_seed: int | None = None
    # model and optimiser
    hidden: str = "300,300,300,300"
    lr_max: float = 1e-4
    lr_min: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    # schedule
    method: str = "selfpu"
    batch_size: int = 256
    total_epochs: int = 200
    warmup_end: int = 10
    selfpaced_end: int = 50
    # self-paced learning
    pace1: float = 0.2
    pace2: float = 0.3
    selection_mode: str = "dynamic"
    soft_labels: bool = True
    grad_mode: str = "flip"
    # reweighting
    use_reweight: bool = True
    gamma: float = 1.0 / 16.0
    delta: float | None = None
    meta_validation: str = "oracle_holdout"
    # distillation
    use_students: bool = True
    use_teachers: bool = True
    alpha: float = 10.0
    beta: float = 0.3
    teacher_mode: str = "two_step_literal"
    teacher_cadence: str = "per_epoch"
    # run
    seed: int = 0
    out_dir: str = "runs/default"
    checkpoint_every: int = 0
    audit: bool = False
    log_wallclock: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.dataset in DATASETS, f"dataset must be one of {DATASETS}")
        need(self.method in METHODS, f"method must be one of {METHODS}")
        need(0 < self.warmup_end < self.selfpaced_end, "need 0 < warmup_end < selfpaced_end")
        need(self.total_epochs >= 1, "total_epochs must be positive")
        need(self.batch_size >= 1, "batch_size must be positive")
        need(0 < self.pi_p < 1, "pi_p must lie in (0, 1)")
        need(0 < self.pace1 <= 1 and 0 < self.pace2 <= 1, "paces must lie in (0, 1]")
        need(self.alpha > 0, "alpha must be positive")
        need(0 <= self.beta < 1, "beta must lie in [0, 1)")
        need(self.gamma >= 0, "gamma must be non-negative")
        need(self.delta is None or self.delta >= 0, "delta must be non-negative")
        need(self.lr_max > 0 and 0 <= self.lr_min <= self.lr_max, "invalid learning-rate range")
        need(self.unlabeled in ("remaining", "all"), "unlabeled must be 'remaining' or 'all'")
        need(self.selection_mode in ("dynamic", "fixed_size", "no_replacement"), "unknown selection_mode")
        need(self.grad_mode in ("flip", "zero"), "grad_mode must be 'flip' or 'zero'")
        need(self.teacher_mode in ("two_step_literal", "ema_recursive"), "unknown teacher_mode")
        need(self.teacher_cadence in ("per_epoch", "per_step"), "unknown teacher_cadence")
        need(self.meta_validation in ("oracle_holdout", "trusted_bootstrap"), "unknown meta_validation")
        self.layer_dims_hidden()

    def layer_dims_hidden(self) -> list[int]:
        try:
            dims = [int(h) for h in self.hidden.split(",") if h.strip()]
        except ValueError:
            raise ConfigError(f"hidden must be comma-separated integers, got {self.hidden!r}") from None
        if any(d < 1 for d in dims):
            raise ConfigError("hidden widths must be positive")
        return dims

    @property
    def effective_data_seed(self) -> int:
        return self.seed if self.data_seed is None else self.data_seed

    def replace(self, **changes) -> "TrainerConfig":
        return dataclasses.replace(self, **changes)

    def resolved_out_dir(self) -> Path:
        return Path(os.environ.get(OUT_DIR_ENV) or self.out_dir)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                v = "none"
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainerConfig":
        return cls(**{**parse_config_text(text), **overrides})

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainerConfig":
        return cls.from_text(Path(path).read_text(), **overrides)


def _convert(name: str, raw: str, annotation: str):
    raw = raw.strip()
    if "None" in annotation and raw.lower() in ("none", "auto", ""):
        return None
    base = annotation.split("|")[0].strip()
    try:
        if base == "bool":
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if base == "int":
            return int(raw)
        if base == "float":
            if "/" in raw:
                num, den = raw.split("/", 1)
                return float(num) / float(den)
            return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {base}") from None
    return raw


def parse_config_text(text: str) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment; unknown keys are errors."""
    known = {f.name: str(f.type) for f in fields(TrainerConfig)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _convert(key, value, known[key])
    return out
