"""Parameter checkpoints: a JSON manifest plus one concatenated blob.

``manifest.json`` lists (name, shape) in insertion order and
``params.bin`` holds each parameter as little-endian float64, flat and
row-major, concatenated in manifest order. Round-trips are bit-exact.
"""

import json
import os

import numpy as np

from .errors import CheckpointError
from .tensor import Tensor, _prod

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"


def save_checkpoint(params: dict[str, Tensor], path: str):
    os.makedirs(path, exist_ok=True)
    manifest = [{"name": name, "shape": list(t.shape)} for name, t in params.items()]
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    with open(os.path.join(path, BLOB_NAME), "wb") as fh:
        for t in params.values():
            fh.write(t.data.astype("<f8", copy=False).tobytes())


def load_checkpoint(path: str) -> dict[str, Tensor]:
    manifest_path = os.path.join(path, MANIFEST_NAME)
    blob_path = os.path.join(path, BLOB_NAME)
    if not os.path.isfile(manifest_path) or not os.path.isfile(blob_path):
        raise CheckpointError(f"no checkpoint at {path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    with open(blob_path, "rb") as fh:
        blob = fh.read()
    params: dict[str, Tensor] = {}
    offset = 0
    for entry in manifest:
        shape = [int(s) for s in entry["shape"]]
        count = _prod(shape)
        end = offset + 8 * count
        if end > len(blob):
            raise CheckpointError(f"blob too short for parameter {entry['name']!r}")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        params[entry["name"]] = Tensor(
            arr.astype(np.float64), shape, requires_grad=True
        )
        offset = end
    if offset != len(blob):
        raise CheckpointError(f"{len(blob) - offset} trailing bytes in {blob_path}")
    return params
