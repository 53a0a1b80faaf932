"""Versioned little-endian binary checkpoint container.

Layout (all integers unsigned little-endian)::

    magic            8 bytes  b"PSOCKPT\\x00"
    format_version   u32
    layout_version   u32
    iteration        u64
    config_hash      16 bytes
    meta_len         u64, then meta_len bytes of UTF-8 JSON (sorted keys)
    for each of (mean, std, theta):
        count        u64, then count little-endian float64 values
    checksum         8 bytes  blake2b(digest_size=8) of everything before it

The JSON metadata holds the network spec, the down-density descriptor, the
canonical config text and any extra fields.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .network import LAYOUT_VERSION, NetworkSpec

MAGIC = b"PSOCKPT\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIQ16s")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    iteration: int
    config_hash: str
    spec: NetworkSpec
    mean: np.ndarray
    std: np.ndarray
    theta: np.ndarray
    down: dict | None = None
    config_text: str = ""
    extra: dict = field(default_factory=dict)

    def meta(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "down": self.down,
            "config": self.config_text,
            "extra": self.extra,
        }


def _array_bytes(a) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    return struct.pack("<Q", a.size) + a.tobytes()


def dumps(ckpt: Checkpoint) -> bytes:
    theta = np.asarray(ckpt.theta, dtype=np.float64)
    if theta.shape != (ckpt.spec.n_params,):
        raise CheckpointError("theta length does not match the network layout")
    digest = bytes.fromhex(ckpt.config_hash) if ckpt.config_hash else b""
    if len(digest) > 16:
        raise CheckpointError("config hash longer than 16 bytes")
    digest = digest.ljust(16, b"\x00")
    meta = json.dumps(ckpt.meta(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(
        [
            _HEADER.pack(MAGIC, FORMAT_VERSION, LAYOUT_VERSION, int(ckpt.iteration), digest),
            struct.pack("<Q", len(meta)),
            meta,
            _array_bytes(ckpt.mean),
            _array_bytes(ckpt.std),
            _array_bytes(theta),
        ]
    )
    return body + hashlib.blake2b(body, digest_size=8).digest()


def loads(data: bytes) -> Checkpoint:
    if len(data) < _HEADER.size + 8 + 8:
        raise CheckpointError("checkpoint truncated")
    body, checksum = data[:-8], data[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != checksum:
        raise CheckpointError("checkpoint checksum mismatch")
    magic, fmt, layout, iteration, digest = _HEADER.unpack_from(body, 0)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file")
    if fmt != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {fmt}")
    if layout != LAYOUT_VERSION:
        raise CheckpointError(f"unsupported parameter layout version {layout}")
    pos = _HEADER.size
    try:
        (meta_len,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        meta = json.loads(body[pos : pos + meta_len].decode("utf-8"))
        pos += meta_len
        arrays = []
        for _ in range(3):
            (n,) = struct.unpack_from("<Q", body, pos)
            pos += 8
            arrays.append(np.frombuffer(body, dtype="<f8", count=n, offset=pos).astype(np.float64))
            pos += 8 * n
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    if pos != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    spec = NetworkSpec.from_dict(meta["spec"])
    mean, std, theta = arrays
    if theta.size != spec.n_params:
        raise CheckpointError("stored theta length does not match the network layout")
    return Checkpoint(
        iteration=int(iteration),
        config_hash=digest.hex(),
        spec=spec,
        mean=mean,
        std=std,
        theta=theta,
        down=meta.get("down"),
        config_text=meta.get("config", ""),
        extra=meta.get("extra", {}),
    )


def save(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(ckpt))


def load(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from None
    return loads(data)
