"""Checkpoint format: manifest order, bit-exact blobs."""

import json
import os

import numpy as np
import pytest

from more_lab.checkpoint import load_checkpoint, save_checkpoint
from more_lab.errors import CheckpointError
from more_lab.tensor import Tensor


def test_roundtrip_bit_exact(tmp_path, rng):
    params = {
        "b.second": Tensor(rng.normal(size=(3, 4)), requires_grad=True),
        "a.first": Tensor(rng.normal(size=7), requires_grad=True),
        "scalarish": Tensor(rng.normal(size=(1, 1)), requires_grad=True),
    }
    path = str(tmp_path / "ckpt")
    save_checkpoint(params, path)
    again = load_checkpoint(path)
    assert list(again) == list(params)  # manifest preserves insertion order
    for name, t in params.items():
        assert again[name].shape == t.shape
        assert np.array_equal(again[name].data, t.data)
        assert again[name].data.tobytes() == t.data.tobytes()


def test_manifest_names_shapes(tmp_path, rng):
    params = {"w": Tensor(rng.normal(size=(2, 5)), requires_grad=True)}
    path = str(tmp_path / "ckpt")
    save_checkpoint(params, path)
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    assert manifest == [{"name": "w", "shape": [2, 5]}]
    blob = os.path.getsize(os.path.join(path, "params.bin"))
    assert blob == 2 * 5 * 8


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "nope"))


def test_truncated_blob_rejected(tmp_path, rng):
    params = {"w": Tensor(rng.normal(size=10), requires_grad=True)}
    path = str(tmp_path / "ckpt")
    save_checkpoint(params, path)
    blob = os.path.join(path, "params.bin")
    with open(blob, "rb") as fh:
        data = fh.read()
    with open(blob, "wb") as fh:
        fh.write(data[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
