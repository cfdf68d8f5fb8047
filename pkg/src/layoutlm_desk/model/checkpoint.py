"""Versioned binary checkpoint container.

Layout (all integers little-endian)::

    magic        8 bytes   b"LYLMCKPT"
    version      u32       FORMAT_VERSION
    payload_len  u64       byte length of the payload that follows
    payload:
      header_len u32, header  UTF-8 JSON (sorted keys): model config,
                              meta, optimizer step or null
      n_tensors  u32
      per tensor: name_len u16, name UTF-8, ndim u8, dims u32 * ndim,
                  data float64 * prod(dims), row-major
    checksum     32 bytes  SHA-256 of everything before it

Optimizer moments are stored as ordinary tensors named ``opt.m/<param>`` and
``opt.v/<param>``. The writer is deterministic: identical inputs give
identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import (
    CorruptCheckpointError,
    TruncatedCheckpointError,
    UnsupportedVersionError,
)
from ..numkernel import AdamState
from .params import ModelParams
from .types import ModelConfig

MAGIC = b"LYLMCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DIGEST = 32


@dataclass
class Checkpoint:
    params: ModelParams
    config: ModelConfig
    opt_state: AdamState | None = None
    meta: dict = field(default_factory=dict)

    def copy(self) -> "Checkpoint":
        return Checkpoint(self.params.copy(), self.config,
                          self.opt_state.copy() if self.opt_state else None,
                          json.loads(json.dumps(self.meta)))


def to_bytes(ckpt: Checkpoint) -> bytes:
    header = {
        "model": ckpt.config.to_dict(),
        "meta": ckpt.meta,
        "opt_step": None if ckpt.opt_state is None else int(ckpt.opt_state.step),
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tensors = list(ckpt.params.items())
    if ckpt.opt_state is not None:
        tensors += [(f"opt.m/{k}", a) for k, a in ckpt.opt_state.m.items()]
        tensors += [(f"opt.v/{k}", a) for k, a in ckpt.opt_state.v.items()]
    parts = [struct.pack("<I", len(hb)), hb, struct.pack("<I", len(tensors))]
    for name, arr in tensors:
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    payload = b"".join(parts)
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(payload)) + payload
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptCheckpointError("payload shorter than its own records declare")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def from_bytes(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC):
        raise TruncatedCheckpointError("file ends inside the magic bytes")
    if data[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError("bad magic bytes; not a checkpoint")
    if len(data) < _PREFIX.size:
        raise TruncatedCheckpointError("file ends inside the header")
    _, version, payload_len = _PREFIX.unpack_from(data)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"checkpoint format version {version} "
                                      f"(this build reads {FORMAT_VERSION})")
    expected = _PREFIX.size + payload_len + _DIGEST
    if len(data) < expected:
        raise TruncatedCheckpointError(f"expected {expected} bytes, found {len(data)}")
    if len(data) > expected:
        raise CorruptCheckpointError("trailing bytes after checksum")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError("checksum mismatch")
    r = _Reader(body[_PREFIX.size:])
    try:
        (hlen,) = r.unpack("<I")
        header = json.loads(r.take(hlen).decode("utf-8"))
        (count,) = r.unpack("<I")
        tensors = {}
        for _ in range(count):
            (nlen,) = r.unpack("<H")
            name = r.take(nlen).decode("utf-8")
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}I")
            n = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape)
            tensors[name] = arr.astype(np.float64)
        config = ModelConfig.from_dict(header["model"])
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpointError(f"malformed payload: {exc}") from exc
    params = ModelParams((k, v) for k, v in tensors.items() if not k.startswith("opt."))
    opt_state = None
    if header.get("opt_step") is not None:
        opt_state = AdamState(
            {k[6:]: v for k, v in tensors.items() if k.startswith("opt.m/")},
            {k[6:]: v for k, v in tensors.items() if k.startswith("opt.v/")},
            int(header["opt_step"]),
        )
    return Checkpoint(params, config, opt_state, header.get("meta", {}))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    data = to_bytes(ckpt)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def checkpoints_equal(a: Checkpoint, b: Checkpoint) -> bool:
    if a.config != b.config or a.meta != b.meta or list(a.params) != list(b.params):
        return False
    if not all(np.array_equal(a.params[k], b.params[k]) for k in a.params):
        return False
    if (a.opt_state is None) != (b.opt_state is None):
        return False
    if a.opt_state is not None:
        return to_bytes(a) == to_bytes(b)
    return True
