"""Single-file parameter checkpoints (.rmc).

Layout, little-endian:
    "RMC1" | version u32 | meta_len u32 | meta (UTF-8 JSON: arch, config, extras)
    | n_blocks u32 | n_blocks x [name_len u32 | name | rows u32 | cols u32 | rows*cols f64]
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from reconmil.diffcore import ParamSet
from reconmil.heads import ModelArch, ModelParams, param_shapes

MAGIC = b"RMC1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams, meta: dict | None = None) -> None:
    meta = dict(meta or {})
    meta["arch"] = params.arch.to_dict()
    blob = json.dumps(meta, sort_keys=True).encode()
    ps = params.values
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(ps.shapes))]
    for name, (r, c) in ps.shapes.items():
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb + struct.pack("<II", r, c))
        parts.append(np.ascontiguousarray(ps[name].data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError("bad magic")
    try:
        version, mlen = struct.unpack_from("<II", raw, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported version {version}")
        off = 12
        meta = json.loads(raw[off:off + mlen].decode())
        off += mlen
        (nblocks,) = struct.unpack_from("<I", raw, off)
        off += 4
        blocks = {}
        for _ in range(nblocks):
            (nl,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off:off + nl].decode()
            off += nl
            r, c = struct.unpack_from("<II", raw, off)
            off += 8
            nbytes = 8 * r * c
            if off + nbytes > len(raw):
                raise CheckpointError("truncated payload")
            blocks[name] = np.frombuffer(raw, dtype="<f8", count=r * c, offset=off).reshape(r, c)
            off += nbytes
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"truncated payload ({exc})") from exc
    if off != len(raw):
        raise CheckpointError("trailing bytes after last block")
    arch = ModelArch(**meta["arch"])
    ps = ParamSet({name: b.shape for name, b in blocks.items()})
    for name, b in blocks.items():
        ps[name].data[...] = b
    params = ModelParams(arch, ps)
    if param_shapes(arch) != ps.shapes:
        raise CheckpointError("parameter blocks do not match the stored architecture")
    return params, meta
