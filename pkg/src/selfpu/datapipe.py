"""Data ingestion and PU split construction.

* MNIST IDX reading (plain or gzipped, big-endian headers).
* A two-Gaussian generator whose Bayes accuracy is known in closed form.
* Holdout carving for the clean meta-validation set, PU split building and
  split manifests.
* Deterministic batch iteration.
"""
from __future__ import annotations

import gzip
import hashlib
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .errors import ConfigError, FormatError
from .pulosses import ClassPrior

log = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class RawDataset:
    """Features plus the original class/digit targets (oracle metadata)."""

    features: np.ndarray
    targets: np.ndarray
    name: str = "raw"

    def __len__(self):
        return self.features.shape[0]

    def subset(self, idx) -> "RawDataset":
        return RawDataset(self.features[idx], self.targets[idx], self.name)


# --------------------------------------------------------------------------
# IDX files

def _open_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    buf = _open_bytes(path)
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise FormatError(f"{path}: truncated header ({len(buf)} bytes, offset 0)")
    (found,) = struct.unpack_from(">I", buf, 0)
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x} at offset 0, expected 0x{magic:08x}")
    dims = struct.unpack_from(">" + "I" * ndim, buf, 4)
    expected = int(np.prod(dims))
    if len(buf) - header < expected:
        raise FormatError(
            f"{path}: truncated payload at offset {len(buf)}, need {header + expected} bytes")
    return np.frombuffer(buf, dtype=np.uint8, count=expected, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as an IDX file (1-D labels or 3-D images)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = {1: IDX_LABELS_MAGIC, 3: IDX_IMAGES_MAGIC}.get(array.ndim)
    if magic is None:
        raise ValueError("IDX writer supports 1-D labels or 3-D images")
    payload = struct.pack(">I", magic) + struct.pack(">" + "I" * array.ndim, *array.shape) + array.tobytes()
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as fh:
        fh.write(payload)


def load_mnist_idx(images_path, labels_path, name: str = "mnist") -> RawDataset:
    """Load an MNIST image/label pair; pixels are scaled to ``[0, 1]``."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{labels_path}: {labels.shape[0]} labels at offset 4 but {images_path} holds {images.shape[0]} images")
    features = images.reshape(images.shape[0], -1).astype(np.float32) / np.float32(255.0)
    return RawDataset(features, labels.astype(np.int64), name)


def find_mnist_files(directory) -> dict[str, tuple[Path, Path]]:
    """Locate the standard train/test IDX files (``.gz`` optional) in ``directory``."""
    directory = Path(directory)
    stems = {"train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
             "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")}
    found = {}
    for split, names in stems.items():
        paths = []
        for stem in names:
            for cand in (directory / stem, directory / (stem + ".gz"), directory / stem.replace("-idx", ".idx")):
                if cand.exists():
                    paths.append(cand)
                    break
            else:
                raise FileNotFoundError(f"{stem}[.gz] not found in {directory}")
        found[split] = tuple(paths)
    return found


# --------------------------------------------------------------------------
# synthetic data

def gen_two_gaussians(n: int, d: int = 2, mu: float = 1.5, pi_p: float = 0.5, seed: int = 0) -> RawDataset:
    """Positives ~ N((+mu, 0, ...), I), negatives ~ N((-mu, 0, ...), I).

    Exactly ``round(n * pi_p)`` positives; targets are +1 / -1.
    """
    rng = np.random.default_rng(seed)
    n_pos = int(round(n * pi_p))
    y = np.concatenate([np.ones(n_pos, dtype=np.int64), -np.ones(n - n_pos, dtype=np.int64)])
    y = y[rng.permutation(n)]
    x = rng.standard_normal((n, d))
    x[:, 0] += mu * y
    return RawDataset(x.astype(np.float32), y, "two_gaussians")


def bayes_accuracy(mu: float) -> float:
    """Phi(mu): accuracy of ``sign(x_1)`` on the symmetric two-Gaussian task."""
    return 0.5 * (1.0 + math.erf(mu / math.sqrt(2.0)))


# --------------------------------------------------------------------------
# PU splits

POSITIVE_RULES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "odd": lambda t: t % 2 == 1,
    "positive": lambda t: t > 0,
}


def oracle_labels(raw: RawDataset, positive_rule: str) -> np.ndarray:
    try:
        rule = POSITIVE_RULES[positive_rule]
    except KeyError:
        raise ConfigError(f"unknown positive rule {positive_rule!r}") from None
    return np.where(rule(raw.targets), 1, -1).astype(np.int8)


@dataclass
class MetaValidationSet:
    features: np.ndarray
    labels: np.ndarray          # +1 / -1
    source: str = "oracle_holdout"
    ids: np.ndarray | None = None

    def __len__(self):
        return self.labels.shape[0]


def carve_holdout(raw: RawDataset, positive_rule: str, n_per_class: int, seed: int):
    """Split off a class-balanced clean validation set before any PU split.

    Returns ``(MetaValidationSet, remaining RawDataset)``.
    """
    y = oracle_labels(raw, positive_rule)
    rng = np.random.default_rng([seed, 0x0DD])
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == -1)
    if n_per_class > min(pos.size, neg.size):
        raise ConfigError(f"holdout of {n_per_class} per class exceeds the smaller class")
    take = np.sort(np.concatenate([rng.choice(pos, n_per_class, replace=False),
                                   rng.choice(neg, n_per_class, replace=False)]))
    keep = np.setdiff1d(np.arange(len(raw)), take)
    val = MetaValidationSet(raw.features[take], y[take].astype(np.int8), "oracle_holdout", take)
    return val, raw.subset(keep)


@dataclass(frozen=True)
class PuView:
    """What loss code may see: features and P/U tags, no oracle labels."""

    features: np.ndarray
    labeled: np.ndarray          # True for D_P members
    prior: ClassPrior

    def __len__(self):
        return self.labeled.shape[0]


@dataclass
class PuDataset:
    features: np.ndarray
    labeled: np.ndarray                   # bool, True = in D_P
    prior: ClassPrior
    oracle: np.ndarray | None = None      # +1/-1, evaluation and audit only
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return self.labeled.shape[0]

    @property
    def n_p(self) -> int:
        return int(self.labeled.sum())

    @property
    def p_ids(self) -> np.ndarray:
        return np.flatnonzero(self.labeled)

    @property
    def u_ids(self) -> np.ndarray:
        return np.flatnonzero(~self.labeled)

    def view(self) -> PuView:
        return PuView(self.features, self.labeled, self.prior)


def _digest(ids) -> str:
    return hashlib.sha256(np.asarray(ids, dtype="<i8").tobytes()).hexdigest()[:16]


def make_pu_split(raw: RawDataset, positive_rule: str, n_p: int, seed: int, pi_p: float,
                  unlabeled: str = "remaining", holdout_ids=None,
                  max_prior_gap: float = 0.05) -> PuDataset:
    """Draw ``n_p`` labeled positives; the rest (``"remaining"``) or all
    examples (``"all"``, labeled positives duplicated into D_U) become D_U.

    Row order is D_P first, then D_U.
    """
    y = oracle_labels(raw, positive_rule)
    pos = np.flatnonzero(y == 1)
    if n_p < 1 or n_p > pos.size:
        raise ConfigError(f"n_p={n_p} but only {pos.size} oracle positives are available")
    rng = np.random.default_rng([seed, 0x9E])
    p_rows = np.sort(rng.choice(pos, n_p, replace=False))
    if unlabeled == "remaining":
        u_rows = np.setdiff1d(np.arange(len(raw)), p_rows)
    elif unlabeled == "all":
        u_rows = np.arange(len(raw))
    else:
        raise ConfigError(f"unlabeled must be 'remaining' or 'all', got {unlabeled!r}")
    rows = np.concatenate([p_rows, u_rows])
    oracle = y[rows]
    u_frac = float(np.mean(oracle[n_p:] == 1)) if u_rows.size else 0.0
    if abs(u_frac - pi_p) > max_prior_gap:
        raise ConfigError(
            f"declared prior {pi_p} is {abs(u_frac - pi_p):.3f} away from the unlabeled pool's "
            f"positive fraction {u_frac:.3f}")
    labeled = np.zeros(rows.size, dtype=bool)
    labeled[:n_p] = True
    manifest = {
        "dataset": raw.name,
        "seed": seed,
        "n_p": n_p,
        "n_u": int(u_rows.size),
        "pi_p": pi_p,
        "positive_rule": positive_rule,
        "unlabeled": unlabeled,
        "normalization": "x/255" if raw.name == "mnist" else "none",
        "p_ids_digest": _digest(p_rows),
        "holdout_ids_digest": _digest(holdout_ids if holdout_ids is not None else []),
        "unlabeled_positive_fraction": round(u_frac, 6),
    }
    return PuDataset(raw.features[rows], labeled, ClassPrior(pi_p), oracle, manifest)


def write_manifest(path, manifest: dict) -> None:
    lines = [f"{k}={v}" for k, v in manifest.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def split_from_manifest(raw: RawDataset, manifest: dict, holdout_ids=None) -> PuDataset:
    """Rebuild a split from a (possibly string-valued) manifest and verify it."""
    ds = make_pu_split(raw, manifest["positive_rule"], int(manifest["n_p"]), int(manifest["seed"]),
                       float(manifest["pi_p"]), manifest.get("unlabeled", "remaining"), holdout_ids)
    if ds.manifest["p_ids_digest"] != manifest["p_ids_digest"]:
        raise ConfigError("rebuilt split does not match the manifest's positive-id digest")
    return ds


# --------------------------------------------------------------------------
# batching

@dataclass
class Batch:
    ids: np.ndarray
    features: np.ndarray
    labeled: np.ndarray


class BatchIterator:
    """Seeded, epoch-indexed batching over ``n`` rows.

    The order for an epoch depends only on ``(seed, epoch)``. With
    ``stratify`` (a boolean mask) each batch receives a proportional share of
    the flagged rows, so every batch holds both labeled positives and
    unlabeled examples.
    """

    def __init__(self, n: int, batch_size: int, seed: int, stratify: np.ndarray | None = None):
        if batch_size < 1:
            raise ConfigError("batch size must be positive")
        self.n = n
        self.batch_size = batch_size
        self.seed = seed
        self.stratify = None if stratify is None else np.asarray(stratify, dtype=bool)
        self.epoch = 0

    def order(self, epoch: int) -> list[np.ndarray]:
        rng = np.random.default_rng([self.seed, epoch, 0xBA7C])
        n_batches = max(1, -(-self.n // self.batch_size))
        if self.stratify is None:
            perm = rng.permutation(self.n)
            return [perm[i:i + self.batch_size] for i in range(0, self.n, self.batch_size)]
        flagged = np.flatnonzero(self.stratify)
        rest = np.flatnonzero(~self.stratify)
        a = np.array_split(flagged[rng.permutation(flagged.size)], n_batches)
        b = np.array_split(rest[rng.permutation(rest.size)], n_batches)
        return [np.concatenate([x, y]) for x, y in zip(a, b)]

    def __iter__(self) -> Iterator[np.ndarray]:
        batches = self.order(self.epoch)
        self.epoch += 1
        return iter(batches)


def next_batches(view: PuView, it: BatchIterator, epoch: int) -> Iterator[Batch]:
    for idx in it.order(epoch):
        yield Batch(idx, view.features[idx], view.labeled[idx])
