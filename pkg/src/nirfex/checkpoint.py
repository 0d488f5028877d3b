"""Versioned checkpoint container: config echo, named parameter arrays,
optimizer state, RNG bookkeeping, and a content digest for round-trip and
determinism checks. Stored as an npz archive; float arrays round-trip
bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def content_digest(arrays: dict[str, np.ndarray], meta_json: str) -> str:
    h = hashlib.sha256()
    h.update(meta_json.encode("utf-8"))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        h.update(name.encode("utf-8"))
        h.update(str(arr.dtype).encode("utf-8"))
        h.update(str(arr.shape).encode("utf-8"))
        h.update(arr.tobytes())
    return h.hexdigest()


def save_checkpoint(
    path: str | Path,
    config: dict,
    params: dict[str, np.ndarray],
    optimizer: dict[str, np.ndarray] | None = None,
    extra: dict | None = None,
) -> str:
    """Write the container and return its content digest."""
    arrays: dict[str, np.ndarray] = {}
    for name, arr in params.items():
        arrays[f"param/{name}"] = np.asarray(arr)
    for name, arr in (optimizer or {}).items():
        arrays[f"opt/{name}"] = np.asarray(arr)
    meta = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "extra": extra or {},
    }
    meta_json = json.dumps(meta, sort_keys=True)
    digest = content_digest(arrays, meta_json)
    payload = dict(arrays)
    payload["__meta__"] = np.frombuffer(meta_json.encode("utf-8"), dtype=np.uint8)
    payload["__digest__"] = np.frombuffer(digest.encode("ascii"), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    return digest


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray], dict[str, np.ndarray], str]:
    """Return (meta, params, optimizer_state, digest); verifies integrity."""
    with np.load(Path(path)) as archive:
        meta_json = bytes(archive["__meta__"]).decode("utf-8")
        stored_digest = bytes(archive["__digest__"]).decode("ascii")
        arrays = {
            name: archive[name]
            for name in archive.files
            if name not in ("__meta__", "__digest__")
        }
    digest = content_digest(arrays, meta_json)
    if digest != stored_digest:
        raise ValueError(f"checkpoint {path} failed its integrity check")
    meta = json.loads(meta_json)
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {meta.get('format_version')}")
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    optimizer = {k[len("opt/"):]: v for k, v in arrays.items() if k.startswith("opt/")}
    return meta, params, optimizer, digest
