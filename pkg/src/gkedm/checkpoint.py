"""Model checkpoints: a JSON manifest plus a little-endian float64 blob.

A checkpoint is a directory holding ``manifest.json`` and ``params.bin``.
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

from .layers import Architecture, GraphModel

MANIFEST = "manifest.json"
BLOB = "params.bin"
FORMAT = "gkedm-checkpoint/1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: GraphModel, path, extra: dict | None = None) -> Path:
    """Write atomically: build in a sibling temp dir, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors, chunks, offset = [], [], 0
    for name, p in model.named_parameters():
        buf = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(p.shape), "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    arch = model.arch
    manifest = {
        "format": FORMAT,
        "architecture": arch.to_dict(),
        "description": arch.describe(),
        "layer_dims": [arch.in_dim, *arch.widths],
        "n_heads": arch.n_heads,
        "m": arch.pe_dim,
        "dtype": "float64-le",
        "tensors": tensors,
        "extra": extra or {},
    }
    tmp = Path(tempfile.mkdtemp(dir=path.parent, prefix=f".{path.name}."))
    try:
        (tmp / BLOB).write_bytes(b"".join(chunks))
        (tmp / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        if path.exists():
            old = Path(tempfile.mkdtemp(dir=path.parent, prefix=f".{path.name}.old."))
            os.replace(path, old / "ckpt")
            os.replace(tmp, path)
            shutil.rmtree(old)
        else:
            os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return path


def load_checkpoint(path) -> tuple[GraphModel, dict]:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text(encoding="utf-8"))
        blob = (path / BLOB).read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"{path}: missing {Path(exc.filename).name}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path / MANIFEST}: invalid JSON at line {exc.lineno}") from None
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {manifest.get('format')!r}")
    model = GraphModel(Architecture.from_dict(manifest["architecture"]))
    state = {}
    for t in manifest["tensors"]:
        end = t["offset"] + t["nbytes"]
        if end > len(blob):
            raise CheckpointError(f"{path}: tensor {t['name']} runs past the end of {BLOB}")
        state[t["name"]] = np.frombuffer(blob[t["offset"]:end], dtype="<f8").reshape(t["shape"]).astype(np.float64)
    model.load_state(state)
    return model, manifest
