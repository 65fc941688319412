"""Directory-based artifact persistence.

Layout: one directory per artifact with a plain-text ``header.json`` recording
version, kind, metadata, and per-array dtype/shape/byte counts, plus raw
little-endian binary files and UTF-8 line files for string lists. The format is
language-agnostic and round-trips bit-exactly.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ArtifactFormatError

FORMAT_VERSION = 1
HEADER_NAME = "header.json"

# kind name -> class with to_payload()/from_payload(); populated by register()
_REGISTRY: dict[str, type] = {}


def register(cls):
    """Class decorator making a type persistable via save/load_artifact."""
    _REGISTRY[cls.__name__] = cls
    return cls


def _le_dtype(dtype: np.dtype) -> str:
    d = np.dtype(dtype)
    if d.byteorder == ">":
        raise ArtifactFormatError(f"big-endian array dtype {d} not supported")
    return d.newbyteorder("<").str if d.itemsize > 1 else d.str


def save_payload(path, kind: str, meta: dict, arrays: dict, texts: dict) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    header = {"version": FORMAT_VERSION, "kind": kind, "meta": meta,
              "arrays": [], "texts": []}
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dstr = _le_dtype(arr.dtype)
        raw = arr.astype(dstr, copy=False).tobytes()
        fname = f"{name}.bin"
        (path / fname).write_bytes(raw)
        header["arrays"].append({
            "name": name, "dtype": dstr, "shape": list(arr.shape),
            "file": fname, "nbytes": len(raw),
        })
    for name, lines in texts.items():
        fname = f"{name}.txt"
        (path / fname).write_text("\n".join(lines) + "\n", encoding="utf-8")
        header["texts"].append({"name": name, "file": fname, "count": len(lines)})
    (path / HEADER_NAME).write_text(json.dumps(header, indent=2, sort_keys=True),
                                    encoding="utf-8")


def load_payload(path):
    path = Path(path)
    header_path = path / HEADER_NAME
    if not header_path.is_file():
        raise ArtifactFormatError(f"missing {HEADER_NAME} under {path}")
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ArtifactFormatError(f"corrupt header: {exc}") from exc
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise ArtifactFormatError(
            f"format version mismatch: expected {FORMAT_VERSION}, got {version}")
    arrays = {}
    for entry in header["arrays"]:
        raw = (path / entry["file"]).read_bytes()
        if len(raw) != entry["nbytes"]:
            raise ArtifactFormatError(
                f"array {entry['name']!r}: expected {entry['nbytes']} bytes, "
                f"found {len(raw)} (truncated or corrupt)")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    texts = {}
    for entry in header["texts"]:
        lines = (path / entry["file"]).read_text(encoding="utf-8").splitlines()
        if len(lines) != entry["count"]:
            raise ArtifactFormatError(
                f"text {entry['name']!r}: expected {entry['count']} lines, "
                f"found {len(lines)}")
        texts[entry["name"]] = lines
    return header["kind"], header["meta"], arrays, texts


def save_artifact(obj, path) -> None:
    kind = type(obj).__name__
    if kind not in _REGISTRY:
        raise ArtifactFormatError(f"type {kind} is not registered for persistence")
    meta, arrays, texts = obj.to_payload()
    save_payload(path, kind, meta, arrays, texts)


def load_artifact(path):
    kind, meta, arrays, texts = load_payload(path)
    cls = _REGISTRY.get(kind)
    if cls is None:
        raise ArtifactFormatError(f"unknown artifact kind {kind!r}")
    return cls.from_payload(meta, arrays, texts)
