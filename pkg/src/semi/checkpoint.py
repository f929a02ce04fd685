"""Checkpoint serialization: plain-text manifest plus one binary blob.

A checkpoint is two files sharing a stem: ``<stem>.manifest`` lists every
section (a named ParameterSet), each tensor's shape, and its byte offset
into ``<stem>.blob``, which is the little-endian float64 concatenation of
all tensors in manifest order. Round-trips are bit-exact.
"""

from __future__ import annotations

import os

import numpy as np

from .net import ParameterSet

FORMAT_TAG = "semi-checkpoint-v1"


def save_checkpoint(
    stem: str,
    sections: dict[str, ParameterSet],
    meta: dict[str, str] | None = None,
) -> None:
    """Write ``<stem>.manifest`` and ``<stem>.blob``."""
    lines = [f"format: {FORMAT_TAG}"]
    for key, value in (meta or {}).items():
        _check_token(key)
        value = str(value)
        if "\n" in value:
            raise ValueError(f"meta value for {key!r} contains a newline")
        lines.append(f"meta.{key}: {value}")
    chunks: list[bytes] = []
    offset = 0
    for sec_name, params in sections.items():
        _check_token(sec_name)
        for p_name, arr in params.items():
            _check_token(p_name)
            shape = ",".join(str(d) for d in arr.shape) if arr.ndim else "scalar"
            lines.append(f"tensor.{sec_name}.{p_name}.shape: {shape}")
            lines.append(f"tensor.{sec_name}.{p_name}.offset: {offset}")
            raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            chunks.append(raw)
            offset += len(raw)
    lines.append(f"blob_bytes: {offset}")
    tmp_manifest = stem + ".manifest.tmp"
    tmp_blob = stem + ".blob.tmp"
    with open(tmp_manifest, "w") as f:
        f.write("\n".join(lines) + "\n")
    with open(tmp_blob, "wb") as f:
        f.write(b"".join(chunks))
    os.replace(tmp_manifest, stem + ".manifest")
    os.replace(tmp_blob, stem + ".blob")


def load_checkpoint(stem: str) -> tuple[dict[str, ParameterSet], dict[str, str]]:
    """Read a checkpoint back; inverse of ``save_checkpoint``."""
    with open(stem + ".manifest") as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    with open(stem + ".blob", "rb") as f:
        blob = f.read()

    meta: dict[str, str] = {}
    sections: dict[str, ParameterSet] = {}
    shapes: dict[tuple[str, str], tuple[int, ...]] = {}
    declared_bytes = None
    for ln in lines:
        key, sep, value = ln.partition(": ")
        if not sep:
            raise ValueError(f"malformed manifest line: {ln!r}")
        if key == "format":
            if value != FORMAT_TAG:
                raise ValueError(f"unsupported checkpoint format {value!r}")
        elif key.startswith("meta."):
            meta[key[len("meta.") :]] = value
        elif key == "blob_bytes":
            declared_bytes = int(value)
        elif key.startswith("tensor."):
            parts = key.split(".")
            if len(parts) != 4:
                raise ValueError(f"malformed manifest key: {key!r}")
            _, sec_name, p_name, what = parts
            if what == "shape":
                shape = () if value == "scalar" else tuple(int(d) for d in value.split(","))
                shapes[(sec_name, p_name)] = shape
            elif what == "offset":
                shape = shapes.get((sec_name, p_name))
                if shape is None:
                    raise ValueError(f"offset before shape for {sec_name}.{p_name}")
                off = int(value)
                count = int(np.prod(shape)) if shape else 1
                arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
                arr = arr.reshape(shape).astype(np.float64)
                sections.setdefault(sec_name, ParameterSet())[p_name] = arr
            else:
                raise ValueError(f"malformed manifest key: {key!r}")
        else:
            raise ValueError(f"unknown manifest key: {key!r}")
    if declared_bytes is not None and declared_bytes != len(blob):
        raise ValueError(f"blob is {len(blob)} bytes, manifest declares {declared_bytes}")
    return sections, meta


def _check_token(name: str) -> None:
    if not name or "." in name or ":" in name or any(c.isspace() for c in name):
        raise ValueError(f"invalid manifest token {name!r}")
