"""On-disk formats for token grids and reconstruction dumps.

Index grids are JSON lines, one record per image::

    {"sample_id": "...", "N": 64, "C": 2, "V": 64, "indices": [...]}

with ``indices`` flattened row-major over tokens, then codebooks.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ShapeError
from .evaluation.metrics import psnr, ssim


def write_index_grids(path, sample_ids, indices, num_entries: int) -> None:
    indices = np.asarray(indices)
    if indices.ndim != 3 or len(indices) != len(sample_ids):
        raise ShapeError(f"expected S x N x C indices for {len(sample_ids)} samples, got {indices.shape}")
    _, n, c = indices.shape
    with open(path, "w") as fh:
        for sid, grid in zip(sample_ids, indices):
            rec = {"sample_id": str(sid), "N": n, "C": c, "V": int(num_entries), "indices": grid.reshape(-1).tolist()}
            fh.write(json.dumps(rec) + "\n")


def read_index_grids(path) -> tuple[list[str], np.ndarray, int]:
    """Return ``(sample_ids, S x N x C indices, V)``."""
    ids, grids, entries = [], [], set()
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            grid = np.asarray(rec["indices"], dtype=np.int64).reshape(rec["N"], rec["C"])
            if grid.min() < 0 or grid.max() >= rec["V"]:
                raise ShapeError(f"{rec['sample_id']}: index outside [0, {rec['V']})")
            ids.append(rec["sample_id"])
            grids.append(grid)
            entries.add(rec["V"])
    if len(entries) > 1:
        raise ShapeError(f"mixed codebook sizes in {path}")
    return ids, np.stack(grids), entries.pop()


def to_uint8(images) -> np.ndarray:
    arr = np.asarray(images, dtype=np.float64)
    return np.round((np.clip(arr, -1, 1) + 1) * 127.5).astype(np.uint8)


def write_reconstructions(out_dir, sample_ids, originals, recons) -> list[dict]:
    """PNG per sample plus ``manifest.json`` of per-image PSNR/SSIM."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for sid, x, xhat in zip(sample_ids, originals, recons):
        Image.fromarray(to_uint8(xhat)).save(out / f"{sid}.png")
        rows.append({"sample_id": str(sid), "psnr": psnr(x, xhat), "ssim": ssim(x, xhat)})
    (out / "manifest.json").write_text(json.dumps(rows, indent=1))
    return rows
