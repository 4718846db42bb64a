"""Versioned single-file container for fitted models.

A container is an uncompressed ``.npz`` archive: every matrix is stored as a
C-order (row-major) float64 array, and a ``__meta__`` entry holds a JSON
document with the format tag, model kind, dimensions and free-form metadata.
Pickle is never used, so loading cannot execute code.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_TAG = "fsva-container"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    pass


def save_container(path, kind: str, arrays: dict, meta: dict) -> None:
    header = {"format": FORMAT_TAG, "version": FORMAT_VERSION, "kind": kind, **meta}
    payload = {}
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if arr.dtype.kind in "fiub":
            arr = np.ascontiguousarray(arr, dtype=np.float64)
        payload[name] = arr
    payload["__meta__"] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_container(path, kind: str) -> tuple[dict, dict]:
    path = Path(path)
    with np.load(path, allow_pickle=False) as z:
        if "__meta__" not in z.files:
            raise ContainerError(f"{path}: not an fsva container (no metadata)")
        meta = json.loads(str(z["__meta__"]))
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    if meta.get("format") != FORMAT_TAG:
        raise ContainerError(f"{path}: unknown format tag {meta.get('format')!r}")
    if meta.get("version") != FORMAT_VERSION:
        raise ContainerError(f"{path}: unsupported container version {meta.get('version')}")
    if meta.get("kind") != kind:
        raise ContainerError(f"{path}: expected a {kind!r} container, found {meta.get('kind')!r}")
    return arrays, meta
