"""ViT decoder from quantised tokens back to pixels."""

from __future__ import annotations

from typing import Optional

import torch
from torch import nn

from .errors import ShapeError
from .layers import Transformer, named_generator, sincos_pos_embed_2d, unpatchify


class Decoder(nn.Module):
    """Project codes to decoder width, add 2D sincos positions, transform, unpatchify.

    With ``num_latent_tokens`` set, the decoder instead reads a 1D sequence of
    that many code tokens and reconstructs from ``N`` mask queries carrying the
    2D positions (used by the role-reversed layout).
    """

    def __init__(
        self,
        code_dim_total: int,
        depth: int,
        width: int,
        heads: int,
        grid_size: int,
        patch_size: int,
        channels: int = 3,
        mlp_ratio: float = 4.0,
        num_latent_tokens: Optional[int] = None,
    ):
        super().__init__()
        self.grid_size = grid_size
        self.patch_size = patch_size
        self.channels = channels
        self.num_latent_tokens = num_latent_tokens
        self.proj_in = nn.Linear(code_dim_total, width)
        self.register_buffer("pos_embed_2d", sincos_pos_embed_2d(width, grid_size), persistent=False)
        if num_latent_tokens is not None:
            self.mask_token = nn.Parameter(torch.zeros(1, 1, width))
            self.latent_pos_1d = nn.Parameter(torch.zeros(num_latent_tokens, width))
        self.transformer = Transformer(width, depth, heads, mlp_ratio)
        self.head = nn.Linear(width, patch_size**2 * channels)

    def reset_parameters(self, seed: int) -> None:
        if self.num_latent_tokens is None:
            return
        for name in ("mask_token", "latent_pos_1d"):
            nn.init.trunc_normal_(
                getattr(self, name), std=0.02, a=-0.04, b=0.04,
                generator=named_generator(seed, f"decoder.{name}"),
            )

    def forward(self, q_tokens: torch.Tensor) -> torch.Tensor:
        b, n, _ = q_tokens.shape
        pos = self.pos_embed_2d.to(q_tokens.dtype)
        h = self.proj_in(q_tokens)
        if self.num_latent_tokens is None:
            g = int(round(n**0.5))
            if g * g != n:
                raise ShapeError(f"token count {n} is not a perfect square")
            if g != self.grid_size:
                raise ShapeError(f"token grid {g}x{g} != configured {self.grid_size}x{self.grid_size}")
            h = self.transformer(h + pos)
        else:
            if n != self.num_latent_tokens:
                raise ShapeError(f"expected {self.num_latent_tokens} latent tokens, got {n}")
            queries = self.mask_token.expand(b, len(pos), -1) + pos
            h = self.transformer(torch.cat([queries, h + self.latent_pos_1d], dim=1))[:, : len(pos)]
        out = unpatchify(self.head(h), self.patch_size, self.channels)
        return out.clamp(-1.0, 1.0)


def count_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
