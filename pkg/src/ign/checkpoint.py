"""Self-describing binary checkpoint container.

Layout (all integers little-endian)::

    b"IGNCKPT\\0"                      magic, 8 bytes
    u32 header_len, header (UTF-8 JSON): format_version, arch, step, rng_state (hex), meta
    u32 entry_count
    per entry:
        u16 name_len, name (UTF-8)
        u8 tag_len, dtype tag (ASCII: f32 f64 i64 i32 u8 bool)
        u8 ndim, ndim x u64 shape
        u64 payload_len, payload (row-major, little-endian)

Entries keep their insertion order, so a ParamSet round-trips with the same
iteration order and the same bytes.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

MAGIC = b"IGNCKPT\0"
FORMAT_VERSION = 1

_TAGS = {
    torch.float32: "f32",
    torch.float64: "f64",
    torch.int64: "i64",
    torch.int32: "i32",
    torch.uint8: "u8",
    torch.bool: "bool",
}
_NP = {"f32": "<f4", "f64": "<f8", "i64": "<i8", "i32": "<i4", "u8": "u1", "bool": "?"}
_TORCH = {v: k for k, v in _TAGS.items()}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arch: str
    step: int
    entries: dict[str, torch.Tensor]
    rng_state: torch.Tensor | None = None
    meta: dict = field(default_factory=dict)

    def group(self, prefix: str) -> dict[str, torch.Tensor]:
        """Entries under ``prefix/`` with the prefix stripped, in order."""
        p = prefix + "/"
        return {k[len(p):]: v for k, v in self.entries.items() if k.startswith(p)}


def save(path: str | Path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    header = {
        "format_version": FORMAT_VERSION,
        "arch": ckpt.arch,
        "step": int(ckpt.step),
        "rng_state": None if ckpt.rng_state is None else ckpt.rng_state.numpy().tobytes().hex(),
        "meta": ckpt.meta,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    chunks = [MAGIC, struct.pack("<I", len(hbytes)), hbytes, struct.pack("<I", len(ckpt.entries))]
    for name, t in ckpt.entries.items():
        t = t.detach().cpu().contiguous()
        if t.dtype not in _TAGS:
            raise CheckpointError(f"{name}: unsupported dtype {t.dtype}")
        tag = _TAGS[t.dtype].encode()
        nb = name.encode()
        payload = t.numpy().astype(_NP[_TAGS[t.dtype]], copy=False).tobytes()
        chunks += [
            struct.pack("<H", len(nb)), nb,
            struct.pack("<B", len(tag)), tag,
            struct.pack("<B", t.dim()), struct.pack(f"<{t.dim()}Q", *t.shape),
            struct.pack("<Q", len(payload)), payload,
        ]
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)
    return path


def load(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not an IGN checkpoint (bad magic)")
    pos = 8

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        out = raw[pos:pos + n]
        pos += n
        return out

    (hlen,) = struct.unpack("<I", take(4))
    header = json.loads(take(hlen))
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")
    (count,) = struct.unpack("<I", take(4))
    entries: dict[str, torch.Tensor] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        (tlen,) = struct.unpack("<B", take(1))
        tag = take(tlen).decode()
        if tag not in _NP:
            raise CheckpointError(f"{path}: entry {name} has unknown dtype tag {tag!r}")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        (plen,) = struct.unpack("<Q", take(8))
        arr = np.frombuffer(take(plen), dtype=_NP[tag]).reshape(shape)
        entries[name] = torch.from_numpy(arr.copy()).to(_TORCH[tag])
    rng = header.get("rng_state")
    rng_state = None if rng is None else torch.from_numpy(np.frombuffer(bytes.fromhex(rng), dtype=np.uint8).copy())
    return Checkpoint(header["arch"], header["step"], entries, rng_state, header.get("meta", {}))
