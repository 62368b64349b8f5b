"""Bit-exact ``.lsc`` checkpoints.

Layout, all integers little-endian::

    magic      8 bytes   b"LSCKPT\\r\\n"
    version    u32
    fingerprint 32 bytes  raw SHA-256 of the model and schedule configs
    config     u32 length + UTF-8 JSON
    step       u64
    epoch      u64
    count      u32
    entries    count times: u64 length + body
               body = u16 name length, name, u8 dtype code, u8 ndim,
                      ndim x u64 dims, raw values

Entry names are ``<store>/<param>`` for values and ``<store>.m/...`` and
``<store>.v/...`` for the Adam moments; scalar counters are 1-element int64
entries.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import GeneratorConfig, LossWeights, TrainSchedule, from_dict, to_dict
from .layers import ParamStore
from .training import TrainState

MAGIC = b"LSCKPT\r\n"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_CODES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(Exception):
    pass


class MagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class MalformedError(CheckpointError):
    pass


class FingerprintError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    fingerprint: str
    config: dict
    step: int
    epoch: int
    entries: dict = field(default_factory=dict)
    version: int = VERSION


# -- encoding ------------------------------------------------------------------------------


def _encode_entry(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _CODES:
        raise CheckpointError(f"entry {name!r}: unsupported dtype {arr.dtype}")
    raw = name.encode("utf-8")
    body = (
        struct.pack("<H", len(raw)) + raw
        + struct.pack("<BB", _CODES[dt], arr.ndim)
        + struct.pack(f"<{arr.ndim}Q", *arr.shape)
        + np.ascontiguousarray(arr, dtype=dt).tobytes()
    )
    return struct.pack("<Q", len(body)) + body


def encode(ckpt: Checkpoint) -> bytes:
    cfg = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<I", ckpt.version),
        bytes.fromhex(ckpt.fingerprint),
        struct.pack("<I", len(cfg)), cfg,
        struct.pack("<QQI", ckpt.step, ckpt.epoch, len(ckpt.entries)),
    ]
    parts += [_encode_entry(n, a) for n, a in ckpt.entries.items()]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int, what: str) -> memoryview:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"truncated entry: {what} needs {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(buf: bytes) -> Checkpoint:
    if len(buf) < len(MAGIC) or bytes(buf[: len(MAGIC)]) != MAGIC:
        raise MagicError("not a checkpoint: bad magic bytes")
    r = _Reader(buf)
    r.take(len(MAGIC), "magic")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version} (this build reads {VERSION})")
    fp = bytes(r.take(32, "fingerprint")).hex()
    (n_cfg,) = r.unpack("<I", "config length")
    try:
        config = json.loads(bytes(r.take(n_cfg, "config")).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedError(f"config block is not valid JSON: {exc}") from None
    step, epoch, count = r.unpack("<QQI", "header")
    entries = {}
    for i in range(count):
        (length,) = r.unpack("<Q", f"entry {i} length")
        name, arr = _decode_body(bytes(r.take(length, f"entry {i}")), i)
        if name in entries:
            raise MalformedError(f"duplicate entry name {name!r}")
        entries[name] = arr
    if r.pos != len(buf):
        raise MalformedError(f"{len(buf) - r.pos} trailing bytes after last entry")
    return Checkpoint(fp, config, step, epoch, entries, version)


def _decode_body(body: bytes, i: int):
    r = _Reader(body)
    try:
        (n,) = r.unpack("<H", "name length")
        name = bytes(r.take(n, "name")).decode("utf-8")
        code, ndim = r.unpack("<BB", "dtype")
        if code not in _DTYPES:
            raise MalformedError(f"entry {name!r}: unknown dtype code {code}")
        dims = r.unpack(f"<{ndim}Q", "dims")
        dt = _DTYPES[code]
        count = int(np.prod(dims, dtype=object))
        if count * dt.itemsize != len(body) - r.pos:
            raise MalformedError(f"entry {name!r}: {len(body) - r.pos} data bytes for shape {dims} {dt}")
        arr = np.frombuffer(r.take(count * dt.itemsize, "values"), dtype=dt).reshape(dims)
    except TruncatedError as exc:
        raise MalformedError(f"entry {i} is malformed: {exc}") from None
    except UnicodeDecodeError:
        raise MalformedError(f"entry {i}: name is not UTF-8") from None
    return name, arr.astype(dt.newbyteorder("="))


# -- files -----------------------------------------------------------------------------------


def write_checkpoint(ckpt: Checkpoint, path) -> None:
    """Atomic write: readers see the old file or the new one, never a mix."""
    path = Path(path)
    data = encode(ckpt)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def read_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    return decode(data)


# -- TrainState bridge ---------------------------------------------------------------------------


def _store_entries(prefix: str, store: ParamStore) -> dict:
    out = {}
    for name, t in store.items():
        out[f"{prefix}/{name}"] = t.data
    for name in store:
        out[f"{prefix}.m/{name}"] = store.m[name]
    for name in store:
        out[f"{prefix}.v/{name}"] = store.v[name]
    out[f"{prefix}.step"] = np.array([store.step], dtype=np.int64)
    return out


def state_to_checkpoint(state: TrainState, extra: Optional[dict] = None) -> Checkpoint:
    config = {
        "generator": to_dict(state.gen_cfg),
        "schedule": to_dict(state.schedule),
        "weights": to_dict(state.weights),
        "seed": state.seed,
        "dtype": state.generator.dtype.name,
    }
    entries = {**_store_entries("gen", state.generator), **_store_entries("critic", state.critics)}
    for k, v in (extra or {}).items():
        entries[f"extra.{k}"] = np.array([v], dtype=np.int64)
    return Checkpoint(state.fingerprint, config, state.step, state.epoch, entries)


def save(state: TrainState, path, extra: Optional[dict] = None) -> None:
    write_checkpoint(state_to_checkpoint(state, extra), path)


def _fill_store(store: ParamStore, prefix: str, entries: dict) -> None:
    for name, t in store.items():
        for slot, target in ((f"{prefix}/{name}", None), (f"{prefix}.m/{name}", store.m), (f"{prefix}.v/{name}", store.v)):
            if slot not in entries:
                raise MalformedError(f"missing entry {slot!r}")
            arr = entries[slot]
            if arr.shape != t.shape:
                raise MalformedError(f"entry {slot!r} has shape {arr.shape}, model expects {t.shape}")
            if target is None:
                t.data[...] = arr
            else:
                target[name] = arr.astype(store.dtype)
    key = f"{prefix}.step"
    if key not in entries:
        raise MalformedError(f"missing entry {key!r}")
    store.step = int(entries[key][0])


def _configs(ckpt: Checkpoint):
    try:
        cfg = ckpt.config
        return (from_dict(GeneratorConfig, cfg["generator"]), from_dict(TrainSchedule, cfg["schedule"]),
                from_dict(LossWeights, cfg["weights"]), int(cfg["seed"]), np.dtype(cfg["dtype"]))
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise MalformedError(f"config block cannot rebuild the model: {exc}") from None


def checkpoint_to_state(ckpt: Checkpoint) -> TrainState:
    gen_cfg, schedule, weights, seed, dtype = _configs(ckpt)
    state = TrainState.create(gen_cfg, schedule, weights, seed=seed, dtype=dtype)
    _fill_store(state.generator, "gen", ckpt.entries)
    _fill_store(state.critics, "critic", ckpt.entries)
    state.step, state.epoch = ckpt.step, ckpt.epoch
    return state


def load(path, expected_fingerprint: Optional[str] = None, force: bool = False) -> TrainState:
    """Rebuild a :class:`TrainState`; refuses a config mismatch unless ``force``.

    The stored fingerprint is checked against the config block before any
    model is allocated, so a damaged header fails fast.
    """
    ckpt = read_checkpoint(path)
    gen_cfg, schedule, weights, seed, _ = _configs(ckpt)
    own = TrainState(gen_cfg, schedule, weights, None, None, seed).fingerprint
    if not force:
        if own != ckpt.fingerprint:
            raise FingerprintError("checkpoint fingerprint does not match its own config block")
        if expected_fingerprint is not None and expected_fingerprint != ckpt.fingerprint:
            raise FingerprintError(
                f"config fingerprint mismatch: checkpoint {ckpt.fingerprint[:12]}..., expected {expected_fingerprint[:12]}..."
            )
    return checkpoint_to_state(ckpt)


def extra_values(path_or_ckpt) -> dict:
    ckpt = path_or_ckpt if isinstance(path_or_ckpt, Checkpoint) else read_checkpoint(path_or_ckpt)
    return {k[len("extra."):]: int(v[0]) for k, v in ckpt.entries.items() if k.startswith("extra.")}
