"""Checkpoint persistence: a JSON manifest plus one flat little-endian blob.

The manifest records every parameter's name, shape and offset, the dtype,
and whatever run metadata the trainer supplies (config hash, seed, epoch,
validation loss).  Loading validates each shape against the manifest before
any value is copied.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from conseq.errors import SchemaError

MANIFEST_SCHEMA_VERSION = 1
_DTYPES = {"float64": "<f8", "float32": "<f4"}


def save_checkpoint(path: str | Path, params, meta: dict) -> Path:
    """Write <path> (manifest JSON) and the sibling <stem>.bin value blob."""
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    dtype = str(params[0].value.dtype) if params else "float64"
    if dtype not in _DTYPES:
        raise SchemaError(f"unsupported checkpoint dtype {dtype}")
    entries = []
    offset = 0
    chunks = []
    for p in params:
        entries.append({"name": p.name, "shape": list(p.shape), "offset": offset, "size": int(p.value.size)})
        chunks.append(np.ascontiguousarray(p.value, dtype=_DTYPES[dtype]).reshape(-1))
        offset += p.value.size
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "dtype": dtype,
        "blob": blob_path.name,
        "parameters": entries,
        **meta,
    }
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype=_DTYPES[dtype])
    blob_path.write_bytes(blob.tobytes())
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns ({parameter name: value array}, manifest)."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read checkpoint manifest {path}: {exc}") from exc
    if manifest.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise SchemaError(f"unsupported checkpoint schema {manifest.get('schema_version')!r}")
    dtype = manifest.get("dtype")
    if dtype not in _DTYPES:
        raise SchemaError(f"unsupported checkpoint dtype {dtype!r}")
    blob_path = path.parent / manifest["blob"]
    raw = np.frombuffer(blob_path.read_bytes(), dtype=_DTYPES[dtype])
    total = sum(entry["size"] for entry in manifest["parameters"])
    if raw.size != total:
        raise SchemaError(f"checkpoint blob {blob_path} holds {raw.size} values, manifest says {total}")
    values = {}
    for entry in manifest["parameters"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        if size != entry["size"]:
            raise SchemaError(f"manifest size {entry['size']} inconsistent with shape {shape}")
        chunk = raw[entry["offset"] : entry["offset"] + entry["size"]]
        values[entry["name"]] = chunk.reshape(shape).astype(dtype, copy=True)
    return values, manifest


def restore_parameters(params, values: dict[str, np.ndarray]) -> None:
    """Copy loaded values onto live parameters, validating every shape."""
    for p in params:
        if p.name not in values:
            raise SchemaError(f"checkpoint lacks parameter {p.name!r}")
        loaded = values[p.name]
        if loaded.shape != p.value.shape:
            raise SchemaError(
                f"checkpoint shape {loaded.shape} does not match parameter "
                f"{p.name!r} shape {p.value.shape}"
            )
        p.value[...] = loaded
