"""Named float32 arrays on disk: manifest.json + one packed .bin file.

Shared by checkpoints, backbone weight files, and feature stores. Arrays are
row-major little-endian float32; round trips are bit-exact.
"""

from __future__ import annotations

import json
import os
from typing import Mapping

import numpy as np

__all__ = ["write_arrays", "read_arrays", "DTYPE"]

DTYPE = "f32-le"
_NP_DTYPE = np.dtype("<f4")


def write_arrays(directory: str, extra: Mapping, arrays: Mapping[str, np.ndarray],
                 bin_name: str = "arrays.bin") -> None:
    os.makedirs(directory, exist_ok=True)
    entries = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=_NP_DTYPE)
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = dict(extra)
    manifest["dtype"] = DTYPE
    manifest["arrays"] = entries
    with open(os.path.join(directory, bin_name), "wb") as fh:
        for b in blobs:
            fh.write(b)
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_arrays(directory: str, bin_name: str = "arrays.bin"):
    """Returns (manifest dict, {name: float32 array})."""
    with open(os.path.join(directory, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("dtype") != DTYPE:
        raise ValueError(f"unsupported dtype {manifest.get('dtype')!r}")
    with open(os.path.join(directory, bin_name), "rb") as fh:
        raw = fh.read()
    arrays = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(raw, dtype=_NP_DTYPE, count=n, offset=start)
        arrays[entry["name"]] = arr.reshape(shape).copy()
    return manifest, arrays
