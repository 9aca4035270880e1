import json

import numpy as np
import pytest

from embnav.io_bin import read_arrays, write_arrays


def test_round_trip_bit_exact(tmp_path):
    arrays = {
        "weights": np.arange(12, dtype=np.float32).reshape(3, 4) / 7,
        "bias": np.array([1e-30, -0.0, 3.5e8], dtype=np.float32),
    }
    write_arrays(str(tmp_path), {"kind": "test"}, arrays)
    manifest, loaded = read_arrays(str(tmp_path))
    assert manifest["kind"] == "test"
    assert manifest["dtype"] == "f32-le"
    for name, arr in arrays.items():
        assert loaded[name].dtype == np.float32
        assert loaded[name].shape == arr.shape
        assert loaded[name].tobytes() == arr.tobytes()


def test_write_is_deterministic(tmp_path):
    arrays = {"a": np.ones((2, 2), dtype=np.float32),
              "b": np.zeros(3, dtype=np.float32)}
    d1, d2 = tmp_path / "one", tmp_path / "two"
    d1.mkdir(); d2.mkdir()
    write_arrays(str(d1), {}, arrays)
    write_arrays(str(d2), {}, dict(reversed(list(arrays.items()))))
    assert (d1 / "arrays.bin").read_bytes() == (d2 / "arrays.bin").read_bytes()
    assert (d1 / "manifest.json").read_bytes() == (d2 / "manifest.json").read_bytes()


def test_manifest_records_shapes(tmp_path):
    write_arrays(str(tmp_path), {}, {"x": np.zeros((5, 2), dtype=np.float32)})
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    entry = [a for a in manifest["arrays"] if a["name"] == "x"][0]
    assert entry["shape"] == [5, 2]


def test_read_missing_directory_raises(tmp_path):
    with pytest.raises((FileNotFoundError, OSError)):
        read_arrays(str(tmp_path / "nope"))
