"""Transformer blocks, positional signals and seeded initialisation."""

from __future__ import annotations

import zlib

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeError


def sincos_pos_embed_2d(width: int, grid: int) -> torch.Tensor:
    """Fixed 2D sine/cosine table of shape ``(grid*grid, width)``, row-major over the grid."""
    if width % 4:
        raise ShapeError(f"2D sincos embedding needs width divisible by 4, got {width}")
    quarter = width // 4
    omega = 1.0 / 10000 ** (np.arange(quarter, dtype=np.float64) / quarter)
    ys, xs = np.meshgrid(np.arange(grid), np.arange(grid), indexing="ij")

    def axis(pos):
        out = np.outer(pos.reshape(-1), omega)
        return np.concatenate([np.sin(out), np.cos(out)], axis=1)

    table = np.concatenate([axis(ys), axis(xs)], axis=1)
    return torch.from_numpy(table).float()


def patchify_pixels(x: torch.Tensor, patch: int) -> torch.Tensor:
    """``B x H x W x C`` images to ``B x N x (patch*patch*C)`` raw patches."""
    if x.ndim != 4:
        raise ShapeError(f"expected B x H x W x C images, got shape {tuple(x.shape)}")
    b, h, w, c = x.shape
    if h != w or h % patch:
        raise ShapeError(f"image {h}x{w} is not divisible into {patch}x{patch} patches")
    g = h // patch
    x = x.reshape(b, g, patch, g, patch, c).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(b, g * g, patch * patch * c)


def unpatchify(patches: torch.Tensor, patch: int, channels: int) -> torch.Tensor:
    """Exact inverse of :func:`patchify_pixels`."""
    if patches.ndim != 3 or patches.shape[2] != patch * patch * channels:
        raise ShapeError(
            f"expected B x N x {patch * patch * channels} patches, got {tuple(patches.shape)}"
        )
    b, n, _ = patches.shape
    g = int(round(n**0.5))
    if g * g != n:
        raise ShapeError(f"token count {n} is not a perfect square")
    x = patches.reshape(b, g, g, patch, patch, channels).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(b, g * patch, g * patch, channels)


class Attention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)

    def forward(self, x):
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        out = F.scaled_dot_product_attention(qkv[0], qkv[1], qkv[2])
        return self.proj(out.transpose(1, 2).reshape(b, n, d))


class Block(nn.Module):
    """Pre-norm transformer block with full bidirectional attention."""

    def __init__(self, width: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        hidden = int(width * mlp_ratio)
        self.norm1 = nn.LayerNorm(width)
        self.attn = Attention(width, heads)
        self.norm2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(nn.Linear(width, hidden), nn.GELU(), nn.Linear(hidden, width))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class Transformer(nn.Module):
    def __init__(self, width: int, depth: int, heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.blocks = nn.ModuleList(Block(width, heads, mlp_ratio) for _ in range(depth))
        self.norm = nn.LayerNorm(width)

    def forward(self, x):
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)


def named_generator(seed: int, name: str) -> torch.Generator:
    """Generator keyed on ``(seed, name)`` so a tensor's init ignores its neighbours."""
    g = torch.Generator()
    g.manual_seed((seed * 1_000_003 + zlib.crc32(name.encode())) % (2**63))
    return g


def init_module(module: nn.Module, seed: int, prefix: str = "") -> None:
    """Truncated-normal (std 0.02) weights, zero biases, unit norms.

    Each parameter draws from its own name-keyed generator, which keeps shared
    submodules bit-identical across configs that differ elsewhere (e.g. token count).
    """
    for name, mod in module.named_modules():
        full = f"{prefix}{name}"
        if isinstance(mod, (nn.Linear, nn.Conv2d)):
            nn.init.trunc_normal_(
                mod.weight, std=0.02, a=-0.04, b=0.04, generator=named_generator(seed, full + ".weight")
            )
            if mod.bias is not None:
                nn.init.zeros_(mod.bias)
        elif isinstance(mod, nn.LayerNorm):
            nn.init.ones_(mod.weight)
            nn.init.zeros_(mod.bias)


def frozen(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    return module.eval()


def random_conv_init(module: nn.Module, seed: int) -> None:
    """He-normal init for the frozen random feature nets (teacher, perceptual, desk-FID)."""
    for name, mod in module.named_modules():
        if isinstance(mod, nn.Conv2d):
            fan_in = mod.weight[0].numel()
            with torch.no_grad():
                mod.weight.normal_(0.0, (2.0 / fan_in) ** 0.5, generator=named_generator(seed, name))
                if mod.bias is not None:
                    mod.bias.zero_()
