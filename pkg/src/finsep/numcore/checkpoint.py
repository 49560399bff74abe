"""Versioned checkpoint container.

Layout (all text UTF-8, one record per line, ``\\n`` terminated)::

    FINSEP-CHECKPOINT 1
    arch <name>
    seed <int>
    hp <key> <json value>          # zero or more, model hyperparameters
    meta <key> <json value>        # zero or more, free-form run state
    array <name> <f4|f8> <shape>   # shape as comma-separated dims, "-" for scalars
    end
    <array payloads, little-endian, concatenated in declaration order>
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

MAGIC = "FINSEP-CHECKPOINT"
VERSION = 1
_DTYPES = {"f4": np.dtype("<f4"), "f8": np.dtype("<f8")}


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arch: str
    seed: int
    hparams: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _shape_text(shape):
    return ",".join(str(d) for d in shape) if shape else "-"


def save_checkpoint(path, ckpt: Checkpoint, dtype: str = "f4") -> None:
    """Write ``ckpt`` atomically. ``dtype`` applies to every array (``f4`` or ``f8``)."""
    if dtype not in _DTYPES:
        raise ValueError(f"checkpoint dtype must be one of {sorted(_DTYPES)}")
    lines = [f"{MAGIC} {VERSION}", f"arch {ckpt.arch}", f"seed {int(ckpt.seed)}"]
    for k, v in ckpt.hparams.items():
        lines.append(f"hp {k} {json.dumps(v)}")
    for k, v in ckpt.meta.items():
        lines.append(f"meta {k} {json.dumps(v)}")
    blobs = []
    for name, arr in ckpt.arrays.items():
        if any(c.isspace() for c in name):
            raise ValueError(f"array name may not contain whitespace: {name!r}")
        a = np.asarray(arr, dtype=_DTYPES[dtype])
        lines.append(f"array {name} {dtype} {_shape_text(a.shape)}")
        blobs.append(a.tobytes())
    lines.append("end")
    payload = ("\n".join(lines) + "\n").encode() + b"".join(blobs)
    d = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(dir=d, prefix=".ckpt-")
    except OSError as exc:
        raise OSError(exc.errno, exc.strerror, str(path)) from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.find(b"\nend\n")
    if not raw.startswith(MAGIC.encode()) or end < 0:
        raise CheckpointError(f"{path}: not a checkpoint (missing header)")
    try:
        header = raw[:end].decode().split("\n")
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header") from exc
    body = memoryview(raw)[end + len(b"\nend\n"):]

    magic, _, version = header[0].partition(" ")
    if version != str(VERSION):
        raise CheckpointError(f"{path}: unsupported checkpoint version {version!r}")
    arch, seed = None, None
    hparams, meta, decls = {}, {}, []
    try:
        for line in header[1:]:
            tag, _, rest = line.partition(" ")
            if tag == "arch":
                arch = rest
            elif tag == "seed":
                seed = int(rest)
            elif tag in ("hp", "meta"):
                key, _, val = rest.partition(" ")
                (hparams if tag == "hp" else meta)[key] = json.loads(val)
            elif tag == "array":
                name, dt, shape = rest.split(" ")
                dims = () if shape == "-" else tuple(int(s) for s in shape.split(","))
                decls.append((name, _DTYPES[dt], dims))
            else:
                raise CheckpointError(f"{path}: unknown header record {tag!r}")
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header ({exc})") from exc
    if arch is None or seed is None:
        raise CheckpointError(f"{path}: header lacks arch or seed")

    arrays, off = {}, 0
    for name, dt, dims in decls:
        n = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        if off + n > len(body):
            raise CheckpointError(f"{path}: truncated payload at array {name!r}")
        arrays[name] = np.frombuffer(body[off:off + n], dtype=dt).reshape(dims).astype(dt.newbyteorder("="))
        off += n
    if off != len(body):
        raise CheckpointError(f"{path}: {len(body) - off} trailing bytes after declared arrays")
    return Checkpoint(arch=arch, seed=seed, hparams=hparams, arrays=arrays, meta=meta)
