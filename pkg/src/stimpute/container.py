"""Self-describing artifact container: JSON header + base64 tensor blobs.

One format serves model checkpoints, PCA models, and weekly-hourly tables,
distinguished by a ``kind`` tag. Serialization is byte-stable: identical
payloads and tensors always produce identical files.
"""

import base64
import json
from pathlib import Path

import numpy as np

from .errors import ParseError

FORMAT_VERSION = 1


def _encode_tensor(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr)
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return {
        "dtype": arr.dtype.name,
        "shape": list(arr.shape),
        "data": base64.b64encode(le.tobytes()).decode("ascii"),
    }


def _decode_tensor(entry: dict) -> np.ndarray:
    raw = base64.b64decode(entry["data"])
    dtype = np.dtype(entry["dtype"]).newbyteorder("<")
    arr = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"])
    return arr.astype(np.dtype(entry["dtype"]), copy=True)


def save_container(path, kind: str, payload: dict,
                   tensors: dict[str, np.ndarray], seed=None):
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "seed": seed,
        "payload": payload,
        "tensors": {name: _encode_tensor(arr) for name, arr in tensors.items()},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))


def load_container(path, expect_kind: str | None = None):
    """Returns (kind, payload, tensors, seed)."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read container {path}: {exc}") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise ParseError(
            f"unsupported container version {doc.get('format_version')!r}")
    kind = doc.get("kind")
    if expect_kind is not None and kind != expect_kind:
        raise ParseError(f"expected a {expect_kind!r} container, got {kind!r}")
    tensors = {name: _decode_tensor(entry)
               for name, entry in doc["tensors"].items()}
    return kind, doc["payload"], tensors, doc.get("seed")
