import json

import numpy as np
import pytest
from PIL import Image

from hybridtok.errors import ShapeError
from hybridtok.export import read_index_grids, to_uint8, write_index_grids, write_reconstructions


def test_index_grid_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    grids = rng.integers(0, 64, size=(3, 16, 2))
    write_index_grids(tmp_path / "g.jsonl", ["a", "b", "c"], grids, 64)
    ids, back, v = read_index_grids(tmp_path / "g.jsonl")
    assert ids == ["a", "b", "c"] and v == 64 and np.array_equal(back, grids)
    first = json.loads((tmp_path / "g.jsonl").read_text().splitlines()[0])
    # row-major: token 0 codebooks 0..C-1, then token 1, ...
    assert first["indices"][:4] == grids[0, :2].reshape(-1).tolist()


def test_index_grid_validation(tmp_path):
    with pytest.raises(ShapeError):
        write_index_grids(tmp_path / "g.jsonl", ["a"], np.zeros((2, 4, 2), dtype=int), 8)
    (tmp_path / "bad.jsonl").write_text(json.dumps({"sample_id": "a", "N": 1, "C": 1, "V": 4, "indices": [4]}) + "\n")
    with pytest.raises(ShapeError):
        read_index_grids(tmp_path / "bad.jsonl")


def test_to_uint8_range():
    assert to_uint8(np.array([-1.0, 0.0, 1.0, 3.0])).tolist() == [0, 128, 255, 255]


def test_reconstruction_dump(tmp_path):
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, size=(2, 16, 16, 3))
    rows = write_reconstructions(tmp_path, ["p", "q"], x, x)
    assert [r["psnr"] for r in rows] == [100.0, 100.0]
    assert json.loads((tmp_path / "manifest.json").read_text()) == rows
    saved = np.asarray(Image.open(tmp_path / "p.png"))
    assert np.array_equal(saved, to_uint8(x[0]))
