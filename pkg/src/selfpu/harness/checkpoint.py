"""Binary checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic  b"SELFPUCK"
    u32       format version
    u32       header length, then that many bytes of UTF-8 JSON
    u32       array count, then per array:
                u16 name length, name bytes, u8 dtype code,
                u32 ndim, ndim x u32 dims, raw little-endian data
    32 bytes  SHA-256 of everything above
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..distill import TeacherState
from ..errors import CheckpointError
from ..ndnum import AdamState, MlpModel
from ..selfpace import TrustedSet

MAGIC = b"SELFPUCK"
VERSION = 1
_DTYPES = {0: "<f4", 1: "<u4", 2: "<i8", 3: "|u1", 4: "<f8"}
_CODES = {np.dtype(v).str: k for k, v in _DTYPES.items()}


@dataclass
class TrainState:
    epoch: int                               # next epoch to run
    students: list[MlpModel]
    adams: list[AdamState]
    trusted: list[TrustedSet]
    teachers: list[TeacherState] | None = None
    meta: dict = field(default_factory=dict)


def rng_digest(seed: int, data_seed: int) -> str:
    """All randomness is derived from ``(seed, epoch, ...)``, so the seeds
    determine the generator state completely."""
    return hashlib.sha256(f"selfpu-rng:{seed}:{data_seed}".encode()).hexdigest()[:16]


def _model_arrays(prefix, model: MlpModel):
    out = {}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        out[f"{prefix}.w{i}"] = w
        out[f"{prefix}.b{i}"] = b
    return out


def _model_from(arrays, prefix, n_layers) -> MlpModel:
    return MlpModel([arrays[f"{prefix}.w{i}"] for i in range(n_layers)],
                    [arrays[f"{prefix}.b{i}"] for i in range(n_layers)])


def save_checkpoint(path, state: TrainState, config_text: str = "", rng: str = "") -> None:
    arrays = {}
    header = {
        "epoch": state.epoch,
        "config": config_text,
        "rng_digest": rng,
        "n_layers": len(state.students[0].weights),
        "adam": [[a.step, a.beta1, a.beta2, a.eps] for a in state.adams],
        "trusted": [[t.capacity_target, bool(t.capped)] for t in state.trusted],
        "teachers": None,
        "meta": state.meta,
    }
    for k, (s, a, t) in enumerate(zip(state.students, state.adams, state.trusted)):
        arrays.update(_model_arrays(f"s{k}", s))
        for i, (m, v) in enumerate(zip(a.m, a.v)):
            arrays[f"s{k}.adam.m{i}"] = m
            arrays[f"s{k}.adam.v{i}"] = v
        arrays[f"trust{k}.ids"] = t.ids.astype("<i8")
        arrays[f"trust{k}.soft"] = t.soft_pos.astype("<f4")
        arrays[f"trust{k}.pos"] = t.positive.astype(np.uint8)
        arrays[f"trust{k}.epoch"] = t.selected_at.astype("<i8")
    if state.teachers is not None:
        header["teachers"] = []
        for k, t in enumerate(state.teachers):
            header["teachers"].append([t.beta, t.mode, t.prev_student is not None])
            arrays.update(_model_arrays(f"t{k}.theta", t.theta_bar))
            if t.prev_student is not None:
                arrays.update(_model_arrays(f"t{k}.prev", t.prev_student))

    hb = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(hb)), hb, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.itemsize > 1:
            arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        code = _CODES.get(arr.dtype.str)
        if code is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<BI", code, arr.ndim)
                     + struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes())
    body = b"".join(parts)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(body + hashlib.sha256(body).digest())
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint at offset {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> tuple[TrainState, dict]:
    """Returns the training state and the decoded JSON header."""
    buf = Path(path).read_bytes()
    if len(buf) < len(MAGIC) + 8 + 32:
        raise CheckpointError(f"{path}: truncated checkpoint ({len(buf)} bytes)")
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:8]!r}")
    body, digest = buf[:-32], buf[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: digest mismatch (corrupted or truncated)")
    r = _Reader(body)
    r.take(8)
    version, hlen = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    try:
        header = json.loads(r.take(hlen).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from None
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        code, ndim = r.unpack("<BI")
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name}")
        shape = r.unpack(f"<{ndim}I")
        dt = np.dtype(_DTYPES[code])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        arrays[name] = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))

    try:
        nl = header["n_layers"]
        students, adams, trusted = [], [], []
        for k in range(2):
            students.append(_model_from(arrays, f"s{k}", nl))
            step, b1, b2, eps = header["adam"][k]
            adams.append(AdamState(_adam_list(arrays, k, "m", nl), _adam_list(arrays, k, "v", nl),
                                   step, b1, b2, eps))
            cap, capped = header["trusted"][k]
            trusted.append(TrustedSet(arrays[f"trust{k}.ids"].astype(np.int64), arrays[f"trust{k}.soft"],
                                      arrays[f"trust{k}.pos"].astype(bool),
                                      arrays[f"trust{k}.epoch"].astype(np.int64), cap, capped))
        teachers = None
        if header["teachers"] is not None:
            teachers = []
            for k, (beta, mode, has_prev) in enumerate(header["teachers"]):
                prev = _model_from(arrays, f"t{k}.prev", nl) if has_prev else None
                teachers.append(TeacherState(_model_from(arrays, f"t{k}.theta", nl), beta, mode, prev))
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing field {exc}") from None
    return TrainState(header["epoch"], students, adams, trusted, teachers, header.get("meta", {})), header


def _adam_list(arrays, k, which, n_layers):
    return [arrays[f"s{k}.adam.{which}{i}"] for i in range(2 * n_layers)]
