"""Synthetic shapes dataset, folder ingestion and in-memory batching."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .encoder import ImageBatch
from .errors import IngestError

DATA_ROOT_ENV = "HYBRIDTOK_DATA_ROOT"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
SHAPE_KINDS = ("circle", "square", "triangle", "cross", "ring", "diamond", "hbar", "vbar")


@dataclass(frozen=True)
class ShapesSpec:
    num_samples: int = 2000
    image_size: int = 32
    num_classes: int = 4
    radius_range: tuple[float, float] = (0.22, 0.38)  # fraction of image size
    center_jitter: float = 0.15  # max offset from centre, fraction of image size
    background_range: tuple[float, float] = (0.0, 0.35)
    foreground_range: tuple[float, float] = (0.55, 1.0)
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.num_classes <= len(SHAPE_KINDS):
            raise IngestError(f"num_classes must be in [1, {len(SHAPE_KINDS)}]")
        if self.num_samples < 1 or self.image_size < 4:
            raise IngestError("num_samples must be >= 1 and image_size >= 4")


def shape_mask(kind: str, dx: np.ndarray, dy: np.ndarray, r: float) -> np.ndarray:
    ax, ay = np.abs(dx), np.abs(dy)
    if kind == "circle":
        return dx**2 + dy**2 <= r**2
    if kind == "square":
        return np.maximum(ax, ay) <= 0.8 * r
    if kind == "triangle":
        base = 0.7 * r
        return (dy >= -r) & (dy <= base) & (ax <= (dy + r) / (base + r) * r)
    if kind == "cross":
        arm = r / 3
        return ((ax <= arm) & (ay <= r)) | ((ay <= arm) & (ax <= r))
    if kind == "ring":
        d2 = dx**2 + dy**2
        return (d2 <= r**2) & (d2 >= (0.55 * r) ** 2)
    if kind == "diamond":
        return ax + ay <= r
    if kind == "hbar":
        return (ax <= r) & (ay <= r / 3)
    if kind == "vbar":
        return (ay <= r) & (ax <= r / 3)
    raise IngestError(f"unknown shape kind {kind!r}")


def render_shapes(spec: ShapesSpec) -> tuple[np.ndarray, np.ndarray]:
    """Deterministically draw ``num_samples`` uint8 RGB images and their labels.

    Label ``i % num_classes`` for sample ``i`` keeps classes balanced within one.
    Colours, sizes and positions are independent of the class.
    """
    rng = np.random.default_rng(spec.seed)
    size = spec.image_size
    coords = np.arange(size) + 0.5
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    images = np.empty((spec.num_samples, size, size, 3), dtype=np.uint8)
    labels = np.arange(spec.num_samples) % spec.num_classes
    for i, label in enumerate(labels):
        r = rng.uniform(*spec.radius_range) * size
        cx, cy = size / 2 + rng.uniform(-1, 1, size=2) * spec.center_jitter * size
        bg = rng.uniform(*spec.background_range, size=3)
        fg = rng.uniform(*spec.foreground_range, size=3)
        mask = shape_mask(SHAPE_KINDS[label], xx - cx, yy - cy, r)
        img = np.where(mask[..., None], fg, bg)
        images[i] = np.round(img * 255).astype(np.uint8)
    return images, labels


@dataclass
class ManifestEntry:
    sample_id: str
    path: str
    label: Optional[int] = None


@dataclass
class DatasetManifest:
    root: str
    entries: list[ManifestEntry] = field(default_factory=list)
    class_names: Optional[list[str]] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        doc = json.loads(text)
        return cls(doc["root"], [ManifestEntry(**e) for e in doc["entries"]], doc.get("class_names"))

    def validate(self) -> None:
        ids = [e.sample_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise IngestError("duplicate sample ids in manifest")
        missing = [e.path for e in self.entries if not (Path(self.root) / e.path).exists()]
        if missing:
            raise IngestError(f"missing files: {missing[:10]}")


def generate_shapes(spec: ShapesSpec, out_dir, force: bool = False) -> DatasetManifest:
    """Write the dataset as PNGs plus ``labels.csv``; identical specs give identical bytes."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise IngestError(f"output directory {out} is not empty (use force)")
    out.mkdir(parents=True, exist_ok=True)
    images, labels = render_shapes(spec)
    entries = []
    for i, (img, label) in enumerate(zip(images, labels)):
        sid = f"shape_{i:05d}"
        Image.fromarray(img).save(out / f"{sid}.png", optimize=False)
        entries.append(ManifestEntry(sid, f"{sid}.png", int(label)))
    with open(out / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "label"])
        writer.writerows((e.sample_id, e.label) for e in entries)
    return DatasetManifest(str(out), entries, [str(i) for i in range(spec.num_classes)])


def _class_order(names: Sequence[str]) -> list[str]:
    uniq = set(names)
    try:
        return sorted(uniq, key=int)
    except ValueError:
        return sorted(uniq)


def ingest(root) -> DatasetManifest:
    """Index a folder of images, with optional ``labels.csv`` (``sample_id,label``)."""
    root = Path(root)
    if not root.is_dir():
        raise IngestError(f"{root} is not a directory")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    seen, bad, entries = {}, [], []
    for p in files:
        if p.stem in seen:
            raise IngestError(f"duplicate sample id {p.stem!r} ({seen[p.stem]}, {p.name})")
        seen[p.stem] = p.name
        try:
            with Image.open(p) as im:
                im.verify()
        except (UnidentifiedImageError, OSError):
            bad.append(p.name)
            continue
        entries.append(ManifestEntry(p.stem, p.name))
    if bad:
        raise IngestError(f"unreadable images: {bad}")

    class_names = None
    labels_path = root / "labels.csv"
    if labels_path.exists():
        with open(labels_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if rows and set(rows[0]) != {"sample_id", "label"}:
            raise IngestError("labels.csv header must be sample_id,label")
        raw = {row["sample_id"]: row["label"] for row in rows}
        unknown = sorted(set(raw) - set(seen))
        if unknown:
            raise IngestError(f"labels.csv references unknown sample ids: {unknown[:10]}")
        class_names = _class_order(raw.values())
        index = {name: i for i, name in enumerate(class_names)}
        for e in entries:
            if e.sample_id in raw:
                e.label = index[raw[e.sample_id]]
    return DatasetManifest(str(root), entries, class_names)


@dataclass
class ArrayDataset:
    """uint8 images held in memory, converted to ``[-1, 1]`` per batch."""

    images: np.ndarray  # S x H x W x C uint8
    sample_ids: list[str]
    labels: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.images)

    def subset(self, idx) -> "ArrayDataset":
        idx = np.asarray(idx)
        labels = None if self.labels is None else self.labels[idx]
        return ArrayDataset(self.images[idx], [self.sample_ids[i] for i in idx], labels)

    def split(self, eval_fraction: float, seed: int) -> tuple["ArrayDataset", "ArrayDataset"]:
        perm = np.random.default_rng(seed).permutation(len(self))
        n_eval = max(1, int(round(len(self) * eval_fraction)))
        return self.subset(np.sort(perm[n_eval:])), self.subset(np.sort(perm[:n_eval]))

    def batch(self, idx, dtype=torch.float32) -> ImageBatch:
        idx = np.asarray(idx)
        data = torch.from_numpy(self.images[idx].astype(np.float64) / 127.5 - 1.0).to(dtype)
        labels = None if self.labels is None else torch.from_numpy(self.labels[idx].astype(np.int64))
        return ImageBatch(data, [self.sample_ids[i] for i in idx], labels)

    def iter_batches(self, batch_size: int, dtype=torch.float32):
        for start in range(0, len(self), batch_size):
            yield self.batch(np.arange(start, min(start + batch_size, len(self))), dtype)


def batch_indices(seed: int, step: int, n: int, batch_size: int) -> np.ndarray:
    """Indices for a training step; a pure function of ``(seed, step)`` so resuming needs no RNG state."""
    rng = np.random.default_rng([seed, step])
    return rng.choice(n, size=min(batch_size, n), replace=False)


def shapes_dataset(spec: ShapesSpec) -> ArrayDataset:
    images, labels = render_shapes(spec)
    return ArrayDataset(images, [f"shape_{i:05d}" for i in range(len(images))], labels)


def load_manifest(manifest: DatasetManifest, image_size: Optional[int] = None) -> ArrayDataset:
    images, ids, labels = [], [], []
    for e in manifest.entries:
        with Image.open(Path(manifest.root) / e.path) as im:
            im = im.convert("RGB")
            if image_size is not None and im.size != (image_size, image_size):
                im = im.resize((image_size, image_size), Image.BILINEAR)
            images.append(np.asarray(im, dtype=np.uint8))
        ids.append(e.sample_id)
        labels.append(-1 if e.label is None else e.label)
    labels = np.asarray(labels)
    return ArrayDataset(np.stack(images), ids, None if (labels < 0).all() else labels)


def resolve_data_root(path) -> Path:
    p = Path(path)
    root = os.environ.get(DATA_ROOT_ENV)
    if not p.is_absolute() and root and not p.exists():
        p = Path(root) / p
    return p


def load_dataset(path, image_size: Optional[int] = None) -> ArrayDataset:
    """Load a folder (ingesting it on the fly) or a ``manifest.json``."""
    p = resolve_data_root(path)
    if p.is_file():
        manifest = DatasetManifest.from_json(p.read_text())
    else:
        manifest = ingest(p)
    manifest.validate()
    return load_manifest(manifest, image_size)
