"""Flat binary array containers with JSON sidecar indexes.

One mechanism backs three interfaces: feature tensor files (shape, dtype
and feature kind in the header), weight checkpoints (name -> shape/offset
index plus a config echo), and speaker embedding files (speaker_id ->
float32 vector).

Layout: `<path>` holds the raw little-endian array bytes back to back in
C order; `<path>.json` holds {"arrays": {name: {dtype, shape, offset,
nbytes}}, "meta": {...}}.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def index_path(path: str | Path) -> Path:
    return Path(str(path) + ".json")


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    index: dict = {"arrays": {}, "meta": meta or {}}
    offset = 0
    with open(path, "wb") as fh:
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            data = arr.tobytes()
            index["arrays"][name] = {
                "dtype": arr.dtype.name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(data),
            }
            fh.write(data)
            offset += len(data)
    index_path(path).write_text(json.dumps(index, indent=2))


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    index = json.loads(index_path(path).read_text())
    blob = path.read_bytes()
    arrays = {}
    for name, entry in index["arrays"].items():
        start = entry["offset"]
        raw = blob[start : start + entry["nbytes"]]
        arrays[name] = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
    return arrays, index.get("meta", {})


def save_feature_tensor(path: str | Path, values: np.ndarray, kind: str) -> None:
    save_arrays(path, {"values": values}, meta={"kind": kind})


def load_feature_tensor(path: str | Path) -> tuple[np.ndarray, str]:
    arrays, meta = load_arrays(path)
    return arrays["values"], meta.get("kind", "")


def save_embeddings(path: str | Path, embeddings: dict[str, np.ndarray]) -> None:
    arrays = {k: np.asarray(v, dtype=np.float32) for k, v in embeddings.items()}
    dims = {a.shape for a in arrays.values()}
    if len(dims) > 1:
        raise ValueError(f"inconsistent embedding shapes: {sorted(dims)}")
    save_arrays(path, arrays, meta={"kind": "speaker_embeddings"})


def read_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    arrays, meta = load_arrays(path)
    if meta.get("kind") not in (None, "", "speaker_embeddings"):
        raise ValueError(f"not a speaker embedding container: {meta.get('kind')!r}")
    return {k: v.astype(np.float64) for k, v in arrays.items()}


def save_checkpoint(path: str | Path, state: dict[str, np.ndarray], config: dict) -> None:
    save_arrays(path, state, meta={"kind": "checkpoint", "config": config})


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    arrays, meta = load_arrays(path)
    return arrays, meta.get("config", {})
