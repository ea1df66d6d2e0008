"""Teachers, pooling and the one-directional cosine distillation loss."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .config import ModelConfig
from .errors import NumericError, ShapeError, TeacherDataError
from .layers import frozen, random_conv_init


@dataclass
class TeacherOutput:
    tokens: torch.Tensor  # B x K x D_t

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[1]


def pool(tokens: torch.Tensor) -> torch.Tensor:
    """Mean over the token axis: ``B x L x D -> B x D``."""
    if tokens.ndim != 3 or tokens.shape[1] == 0:
        raise ShapeError(f"cannot pool tokens of shape {tuple(tokens.shape)}")
    return tokens.mean(dim=1)


def cosine_loss(s: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """Batch mean of ``1 - cos(s, t)``; the teacher side never receives gradient."""
    t = t.detach()
    if s.shape != t.shape:
        raise ShapeError(f"student {tuple(s.shape)} and teacher {tuple(t.shape)} differ")
    ns = s.norm(dim=-1)
    nt = t.norm(dim=-1)
    if (ns == 0).any() or (nt == 0).any():
        raise NumericError("zero-norm vector in cosine loss (collapsed tokens?)")
    cos = (s * t).sum(-1) / (ns * nt)
    return (1 - cos).mean()


class FrozenRandomTeacher(nn.Module):
    """Seeded random conv net; one token per patch of the image grid."""

    def __init__(self, channels: int, patch_size: int, dim: int, seed: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(channels, 32, 3, padding=1),
            nn.GELU(),
            nn.Conv2d(32, dim, patch_size, stride=patch_size),
        )
        random_conv_init(self.net, seed)
        frozen(self)

    @torch.no_grad()
    def forward(self, batch) -> TeacherOutput:
        x = batch.data.permute(0, 3, 1, 2).to(self.net[0].weight.dtype)
        feats = self.net(x)
        return TeacherOutput(feats.flatten(2).transpose(1, 2))


def prototype_table(num_classes: int, dim: int, seed: int) -> torch.Tensor:
    """Fixed unit-norm class prototypes; mutually orthogonal when ``num_classes <= dim``."""
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((dim, num_classes))
    if num_classes <= dim:
        q, r = np.linalg.qr(raw)
        table = (q * np.sign(np.diag(r))).T
    else:
        table = raw.T / np.linalg.norm(raw.T, axis=1, keepdims=True)
    return torch.from_numpy(np.ascontiguousarray(table)).float()


class PrototypeTeacher(nn.Module):
    """Maps a sample to the prototype of its class (``K = 1``)."""

    def __init__(self, num_classes: int, dim: int, seed: int):
        super().__init__()
        self.register_buffer("table", prototype_table(num_classes, dim, seed))

    @torch.no_grad()
    def forward(self, batch) -> TeacherOutput:
        if batch.labels is None:
            raise TeacherDataError("prototype teacher needs labels")
        labels = torch.as_tensor(batch.labels, dtype=torch.long)
        if labels.min() < 0 or labels.max() >= len(self.table):
            raise TeacherDataError(f"label outside [0, {len(self.table)})")
        return TeacherOutput(self.table[labels].unsqueeze(1).clone())


def write_teacher_file(path, records) -> None:
    """Write ``(sample_id, K x D_t array)`` pairs as JSON lines."""
    with open(path, "w") as fh:
        for sid, arr in records:
            arr = np.asarray(arr, dtype=np.float64)
            if arr.ndim == 1:
                arr = arr[None]
            k, d = arr.shape
            fh.write(json.dumps({"id": str(sid), "K": k, "D": d, "data": arr.reshape(-1).tolist()}) + "\n")


def read_teacher_file(path) -> dict[str, np.ndarray]:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                arr = np.asarray(rec["data"], dtype=np.float64).reshape(rec["K"], rec["D"])
            except (ValueError, KeyError) as exc:
                raise TeacherDataError(f"{path}:{lineno}: bad teacher record ({exc})") from exc
            if rec["id"] in out:
                raise TeacherDataError(f"{path}:{lineno}: duplicate id {rec['id']!r}")
            out[rec["id"]] = arr
    return out


def missing_teacher_ids(table: dict, sample_ids) -> list[str]:
    return [sid for sid in sample_ids if str(sid) not in table]


class FileTeacher(nn.Module):
    """Precomputed teacher tokens read from a JSON-lines sidecar keyed by sample id."""

    def __init__(self, path):
        super().__init__()
        self.path = Path(path)
        self.table = read_teacher_file(self.path)
        shapes = {a.shape for a in self.table.values()}
        if len(shapes) > 1:
            raise TeacherDataError(f"inconsistent teacher shapes in {path}: {sorted(shapes)}")
        self.dim = shapes.pop()[1] if shapes else 0

    @torch.no_grad()
    def forward(self, batch) -> TeacherOutput:
        missing = missing_teacher_ids(self.table, batch.sample_ids)
        if missing:
            raise TeacherDataError(f"no teacher embedding for {missing[:5]}")
        arr = np.stack([self.table[str(s)] for s in batch.sample_ids])
        return TeacherOutput(torch.from_numpy(arr).to(batch.data.dtype))


def build_teacher(cfg: ModelConfig) -> nn.Module:
    if cfg.teacher_kind == "frozen_random":
        return FrozenRandomTeacher(cfg.in_channels, cfg.patch_size, cfg.teacher_dim, cfg.seed + 7001)
    if cfg.teacher_kind == "prototype":
        return PrototypeTeacher(cfg.teacher_num_classes, cfg.teacher_dim, cfg.seed + 7002)
    if cfg.teacher_kind == "file":
        teacher = FileTeacher(cfg.teacher_file)
        if teacher.dim != cfg.teacher_dim:
            raise TeacherDataError(f"teacher file width {teacher.dim} != teacher_dim {cfg.teacher_dim}")
        return teacher
    raise TeacherDataError(f"unknown teacher kind {cfg.teacher_kind!r}")
