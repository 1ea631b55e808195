"""Self-describing binary checkpoints.

Layout (all integers little-endian):

    magic "ARTIQN01" | u32 version | config text (u32 length + UTF-8)
    | train summary | online params | target params
    | adam first moments | adam second moments | u64 adam step
    | f64 beta1 | f64 beta2 | f64 adam eps | sha256 of everything above

A parameter segment is u32 array count, then per array u32 ndim, u64
dims, and the row-major float64 payload. Round trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, dump_config, parse_config_text
from .errors import (ChecksumMismatchError, CheckpointError, ShapeMismatchError,
                     TruncatedCheckpointError, VersionMismatchError)
from .quantile_net import AdamState, NetParams

MAGIC = b"ARTIQN01"
FORMAT_VERSION = 1

_SUMMARY = struct.Struct("<qQIQQQd")  # master_seed, episode, stage, env_steps, rounds, grad_steps, epsilon


@dataclass
class TrainSummary:
    master_seed: int = 0
    episode: int = 0
    stage: int = 1
    env_steps: int = 0
    update_rounds: int = 0
    grad_steps: int = 0
    epsilon: float = 1.0


@dataclass
class Checkpoint:
    config: RunConfig
    online: NetParams
    target: NetParams
    adam: AdamState
    train: TrainSummary
    version: int = FORMAT_VERSION


class _Reader:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise TruncatedCheckpointError(
                f"checkpoint ends early: wanted {n} bytes at offset {self._pos}, "
                f"file has {len(self._data)}")
        chunk = self._data[self._pos:self._pos + n]
        self._pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def remaining(self) -> int:
        return len(self._data) - self._pos


def _write_params(out: io.BytesIO, params: NetParams) -> None:
    arrays = params.as_list()
    out.write(struct.pack("<I", len(arrays)))
    for arr in arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        out.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            out.write(struct.pack("<Q", dim))
        out.write(arr.tobytes())


def _read_params(r: _Reader) -> NetParams:
    count = r.u32()
    if count != len(NetParams.__dataclass_fields__):
        raise CheckpointError(f"unexpected parameter array count {count}")
    arrays = []
    for _ in range(count):
        ndim = r.u32()
        shape = tuple(r.u64() for _ in range(ndim))
        n_items = int(np.prod(shape)) if shape else 1
        raw = r.take(8 * n_items)
        arrays.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
    return NetParams.from_list(arrays)


def serialize(ckpt: Checkpoint) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", ckpt.version))
    config_text = dump_config(ckpt.config).encode("utf-8")
    out.write(struct.pack("<I", len(config_text)))
    out.write(config_text)
    t = ckpt.train
    out.write(_SUMMARY.pack(t.master_seed, t.episode, t.stage, t.env_steps,
                            t.update_rounds, t.grad_steps, t.epsilon))
    _write_params(out, ckpt.online)
    _write_params(out, ckpt.target)
    _write_params(out, ckpt.adam.m)
    _write_params(out, ckpt.adam.v)
    out.write(struct.pack("<Q", ckpt.adam.t))
    out.write(struct.pack("<ddd", ckpt.adam.beta1, ckpt.adam.beta2, ckpt.adam.eps))
    payload = out.getvalue()
    return payload + hashlib.sha256(payload).digest()


def deserialize(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + 4:
        raise TruncatedCheckpointError(f"file too small to be a checkpoint ({len(data)} bytes)")
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic {data[:len(MAGIC)]!r}, expected {MAGIC!r}")

    r = _Reader(data)
    r.take(len(MAGIC))
    version = r.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"checkpoint format version {version}, "
                                   f"this build reads {FORMAT_VERSION}")
    config_text = r.take(r.u32()).decode("utf-8")
    config = parse_config_text(config_text)
    summary = TrainSummary(*_SUMMARY.unpack(r.take(_SUMMARY.size)))
    online = _read_params(r)
    target = _read_params(r)
    adam_m = _read_params(r)
    adam_v = _read_params(r)
    adam_t = r.u64()
    beta1, beta2, adam_eps = struct.unpack("<ddd", r.take(24))

    if r.remaining() != hashlib.sha256().digest_size:
        raise TruncatedCheckpointError(
            f"expected a 32-byte trailing checksum, found {r.remaining()} bytes")
    stored = r.take(32)
    actual = hashlib.sha256(data[:-32]).digest()
    if stored != actual:
        raise ChecksumMismatchError("checkpoint checksum does not match payload")

    expected = NetParams.shapes(config.net_config())
    for name, params in (("online", online), ("target", target),
                         ("adam.m", adam_m), ("adam.v", adam_v)):
        got = [a.shape for a in params.as_list()]
        if got != expected:
            raise ShapeMismatchError(
                f"{name} parameter shapes {got} do not match the embedded config "
                f"(hidden={config.hidden}, n_cos={config.n_cos}, m={config.m})")

    adam = AdamState(m=adam_m, v=adam_v, t=adam_t, beta1=beta1, beta2=beta2, eps=adam_eps)
    return Checkpoint(config=config, online=online, target=target, adam=adam,
                      train=summary, version=version)


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    blob = serialize(ckpt)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
