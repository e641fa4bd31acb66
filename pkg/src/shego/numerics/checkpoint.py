"""Single-file checkpoint container.

Layout::

    b"SHEGOCKPT1"                       magic
    uint64 little-endian                manifest length in bytes
    32 bytes                            sha256 of the manifest bytes
    manifest                            canonical JSON (sorted keys, utf-8)
    raw buffers                         little-endian, C order, concatenated

The manifest lists every tensor (name, shape, dtype, frozen, offset, nbytes),
the optimizer step, a sha256 of the buffer region, and free-form metadata.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"SHEGOCKPT1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    frozen: dict[str, bool] = field(default_factory=dict)
    step: int = 0
    meta: dict = field(default_factory=dict)
    manifest_hash: str = ""


def tensor_checksum(arr: np.ndarray) -> str:
    arr = np.ascontiguousarray(arr)
    h = hashlib.sha256()
    h.update(str(arr.dtype.str).encode())
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, tensors: dict[str, np.ndarray], frozen: dict[str, bool] | None = None,
                    step: int = 0, meta: dict | None = None) -> str:
    """Write a checkpoint; returns the manifest sha256 (hex)."""
    frozen = frozen or {}
    entries = []
    buffers = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": le.dtype.str,
            "frozen": bool(frozen.get(name, False)),
            "offset": offset,
            "nbytes": len(raw),
        })
        buffers.append(raw)
        offset += len(raw)
    payload = b"".join(buffers)
    manifest = {
        "format": 1,
        "tensors": entries,
        "step": int(step),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "meta": meta or {},
    }
    mbytes = _canonical(manifest)
    digest = hashlib.sha256(mbytes).digest()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(mbytes)))
        fh.write(digest)
        fh.write(mbytes)
        fh.write(payload)
    return digest.hex()


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    (mlen,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    digest = blob[pos:pos + 32]
    pos += 32
    mbytes = blob[pos:pos + mlen]
    pos += mlen
    if hashlib.sha256(mbytes).digest() != digest:
        raise CheckpointError(f"{path}: manifest hash mismatch")
    manifest = json.loads(mbytes)
    payload = blob[pos:]
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise CheckpointError(f"{path}: payload hash mismatch")
    tensors, frozen = {}, {}
    for e in manifest["tensors"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        tensors[e["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
        frozen[e["name"]] = e["frozen"]
    return Checkpoint(tensors, frozen, manifest["step"], manifest["meta"], digest.hex())
