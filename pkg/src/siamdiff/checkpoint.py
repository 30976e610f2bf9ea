"""Portable parameter checkpoints.

Layout (all integers little-endian):

    magic      4 bytes  b"SDCK"
    version    u32
    header_len u32
    header     header_len bytes of UTF-8 JSON (sorted keys, compact)
    payload    float32 little-endian, tensors back to back in directory order

The header holds the architecture, a digest of the run configuration, the
tensor directory (name, shape, byte offset into the payload, element count)
and the SHA-256 of the payload. Parameters are float64 in memory and are
rounded to float32 on save, so a save -> load -> save cycle is byte-stable.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .encoder import Architecture, ModelParams
from .errors import ConfigError, IntegrityError, ShapeError

MAGIC = b"SDCK"
FORMAT_VERSION = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


@dataclass(eq=False)
class Checkpoint:
    params: ModelParams
    config_digest: str = ""
    meta: dict = field(default_factory=dict)


def to_bytes(ck: Checkpoint) -> bytes:
    directory, chunks, offset = [], [], 0
    for name, value in ck.params.tensors.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": ck.params.arch.as_dict(),
        "config_digest": ck.config_digest,
        "meta": ck.meta,
        "tensors": directory,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hb = canonical_json(header).encode()
    return MAGIC + struct.pack("<II", FORMAT_VERSION, len(hb)) + hb + payload


def from_bytes(blob: bytes, expect_arch: Architecture | None = None) -> Checkpoint:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise IntegrityError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise IntegrityError(f"unsupported checkpoint version {version}")
    if 12 + hlen > len(blob):
        raise IntegrityError("truncated checkpoint header")
    try:
        header = json.loads(blob[12: 12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"unreadable checkpoint header: {exc}") from None
    if not isinstance(header, dict):
        raise IntegrityError("checkpoint header is not a JSON object")
    try:
        return _decode(header, blob[12 + hlen:], expect_arch)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"malformed checkpoint header: {exc!r}") from None


def _decode(header, payload, expect_arch):
    if len(payload) != header.get("payload_bytes"):
        raise IntegrityError("payload length does not match header")
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise IntegrityError("payload digest mismatch")
    arch = Architecture(**header["architecture"])
    if expect_arch is not None and arch != expect_arch:
        raise ConfigError(f"checkpoint architecture {arch} does not match the configured one {expect_arch}")
    tensors, end = {}, 0
    for entry in header["tensors"]:
        off, count = entry["offset"], entry["count"]
        if off != end:
            raise IntegrityError(f"tensor {entry['name']} is not contiguous in directory order")
        end = off + 4 * count
        if end > len(payload) or int(np.prod(entry["shape"], dtype=np.int64)) != count:
            raise IntegrityError(f"tensor {entry['name']} directory entry is inconsistent")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=off)
        tensors[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
    if end != len(payload):
        raise IntegrityError("payload has trailing bytes")
    try:
        params = ModelParams(arch, tensors)
    except ShapeError as exc:
        raise IntegrityError(f"tensor directory does not match the architecture: {exc}") from None
    return Checkpoint(params, header.get("config_digest", ""), header.get("meta", {}))


def save_checkpoint(path, ck: Checkpoint):
    blob = to_bytes(ck)
    with open(path, "wb") as fh:
        fh.write(blob)
    return path


def load_checkpoint(path, expect_arch: Architecture | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), expect_arch)


def round_to_f32(params: ModelParams) -> ModelParams:
    """Parameters as they will look after a save/load cycle."""
    return params.replace({k: v.astype(np.float32).astype(np.float64) for k, v in params.tensors.items()})
