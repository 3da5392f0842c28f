"""Array encoding used inside JSON payloads.

Numeric arrays travel as ``{"dtype", "shape", "b64"}`` objects holding the
little-endian bytes in base64. This round-trips float64 values exactly and
is far cheaper than JSON number lists for per-bin and per-sample data.
"""

from __future__ import annotations

import base64

import numpy as np

_ALLOWED = {"<f8", "<i8", "<i4"}


def encode_array(a, dtype: str = "<f8") -> dict:
    if dtype not in _ALLOWED:
        raise ValueError(f"unsupported dtype {dtype}")
    arr = np.ascontiguousarray(np.asarray(a), dtype=np.dtype(dtype))
    return {
        "dtype": dtype,
        "shape": list(arr.shape),
        "b64": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def decode_array(d) -> np.ndarray:
    if isinstance(d, list):
        return np.asarray(d)
    if d["dtype"] not in _ALLOWED:
        raise ValueError(f"unsupported dtype {d['dtype']}")
    raw = base64.b64decode(d["b64"])
    return np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()
