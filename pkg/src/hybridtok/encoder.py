"""Shared ViT encoder over pixel tokens plus a bank of learnable tokens."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import torch
from torch import nn

from .config import ModelConfig
from .errors import ConfigValidationError, ShapeError
from .layers import Transformer, named_generator, patchify_pixels, sincos_pos_embed_2d


@dataclass
class ImageBatch:
    """Images in ``[-1, 1]`` laid out ``B x H x W x C``."""

    data: torch.Tensor
    sample_ids: Sequence[str]
    labels: Optional[torch.Tensor] = None

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ShapeError(f"expected B x H x W x C, got {tuple(self.data.shape)}")
        if len(self.sample_ids) != self.data.shape[0]:
            raise ShapeError("sample_ids length does not match batch size")
        if self.labels is not None and len(self.labels) != self.data.shape[0]:
            raise ShapeError("labels length does not match batch size")

    def __len__(self):
        return self.data.shape[0]

    def check_range(self, tol: float = 1e-6) -> None:
        if self.data.abs().max() > 1 + tol:
            raise ShapeError("image values outside [-1, 1]")


@dataclass
class EncoderOutput:
    pixel_tokens: torch.Tensor  # B x N x D
    semantic_tokens: torch.Tensor  # B x M x D


class LearnableTokenBank(nn.Module):
    """``M`` trainable tokens with trainable 1D positions, shared by every sample."""

    def __init__(self, num_tokens: int, width: int):
        super().__init__()
        self.tokens = nn.Parameter(torch.zeros(num_tokens, width))
        self.pos_embed_1d = nn.Parameter(torch.zeros(num_tokens, width))

    def reset_parameters(self, seed: int) -> None:
        for name in ("tokens", "pos_embed_1d"):
            nn.init.trunc_normal_(
                getattr(self, name), std=0.02, a=-0.04, b=0.04,
                generator=named_generator(seed, f"encoder.bank.{name}"),
            )

    def forward(self, batch_size: int) -> torch.Tensor:
        s0 = self.tokens + self.pos_embed_1d
        return s0.unsqueeze(0).expand(batch_size, -1, -1)


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.num_learnable_tokens < 1:
            raise ConfigValidationError("num_learnable_tokens must be >= 1")
        self.image_size = cfg.image_size
        self.patch_size = cfg.patch_size
        width = cfg.encoder_width
        self.patch_embed = nn.Linear(cfg.patch_size**2 * cfg.in_channels, width)
        self.register_buffer("pos_embed_2d", sincos_pos_embed_2d(width, cfg.grid_size), persistent=False)
        self.bank = LearnableTokenBank(cfg.num_learnable_tokens, width)
        self.transformer = Transformer(width, cfg.encoder_depth, cfg.encoder_heads, cfg.mlp_ratio)

    @property
    def width(self) -> int:
        return self.patch_embed.out_features

    def patchify_embed(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.image_size or x.shape[2] != self.image_size:
            if x.shape[1] % self.patch_size:
                raise ShapeError(f"image size {x.shape[1]} not divisible by patch {self.patch_size}")
            raise ShapeError(f"expected {self.image_size}px images, got {tuple(x.shape[1:3])}")
        patches = patchify_pixels(x, self.patch_size)
        return self.patch_embed(patches) + self.pos_embed_2d.to(patches.dtype)

    def encode(self, p0: torch.Tensor, bank: Optional[LearnableTokenBank] = None) -> EncoderOutput:
        bank = self.bank if bank is None else bank
        s0 = bank(p0.shape[0])
        if s0.shape[-1] != p0.shape[-1]:
            raise ShapeError(f"pixel width {p0.shape[-1]} != learnable token width {s0.shape[-1]}")
        n = p0.shape[1]
        h = self.transformer(torch.cat([p0, s0], dim=1))
        return EncoderOutput(pixel_tokens=h[:, :n], semantic_tokens=h[:, n:])

    def forward(self, x: torch.Tensor) -> EncoderOutput:
        return self.encode(self.patchify_embed(x))
