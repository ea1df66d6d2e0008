"""The hybrid tokenizer: shared encoder, quantised pixel path, pooled semantic path."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .config import ModelConfig
from .decoder import Decoder
from .distill import pool
from .encoder import Encoder, EncoderOutput
from .layers import init_module
from .quantizer import MultiCodebookQuantizer, QuantizeResult

DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class ForwardOutput:
    encoded: EncoderOutput
    quant: QuantizeResult
    recon: torch.Tensor  # B x H x W x C
    semantic: torch.Tensor  # B x D_t, pooled and projected student vector


class HybridTokenizer(nn.Module):
    """Encoder -> (pixel tokens -> quantizer -> decoder, learnable tokens -> pooled vector).

    ``role_layout="losetok"`` swaps the roles: learnable tokens are quantised
    and decoded, pooled pixel tokens are distilled.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.quantizer = MultiCodebookQuantizer(
            cfg.encoder_width,
            cfg.num_codebooks,
            cfg.entries_per_codebook,
            cfg.code_dim_total,
            beta=cfg.beta,
            normalize=cfg.quant_normalize,
        )
        depth, width, heads = cfg.decoder_dims()
        self.decoder = Decoder(
            cfg.code_dim_total,
            depth,
            width,
            heads,
            cfg.grid_size,
            cfg.patch_size,
            cfg.in_channels,
            cfg.mlp_ratio,
            num_latent_tokens=cfg.num_learnable_tokens if cfg.role_layout == "losetok" else None,
        )
        if cfg.encoder_width == cfg.teacher_dim:
            self.student_proj = nn.Identity()
        else:
            self.student_proj = nn.Linear(cfg.encoder_width, cfg.teacher_dim)
        self.reset_parameters(cfg.seed)
        self.to(DTYPES[cfg.dtype])

    def reset_parameters(self, seed: int) -> None:
        init_module(self, seed)
        self.encoder.bank.reset_parameters(seed)
        self.quantizer.reset_parameters(seed)
        self.decoder.reset_parameters(seed)

    @property
    def dtype(self) -> torch.dtype:
        return self.quantizer.books.dtype

    def forward(self, x: torch.Tensor) -> ForwardOutput:
        enc = self.encoder(x.to(self.dtype))
        if self.cfg.role_layout == "losetok":
            recon_tokens, distill_tokens = enc.semantic_tokens, enc.pixel_tokens
        else:
            recon_tokens, distill_tokens = enc.pixel_tokens, enc.semantic_tokens
        quant = self.quantizer(recon_tokens)
        recon = self.decoder(quant.ste_codes)
        semantic = self.student_proj(pool(distill_tokens))
        return ForwardOutput(enc, quant, recon, semantic)

    @torch.no_grad()
    def tokenize(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Discrete indices (``B x N x C``) and pooled semantic vectors (``B x D_t``)."""
        out = self.forward(x)
        return out.quant.indices, out.semantic

    @torch.no_grad()
    def decode_indices(self, indices: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.quantizer.lookup(indices))

    @torch.no_grad()
    def pooled_semantic(self, x: torch.Tensor, raw: bool = False) -> torch.Tensor:
        """Pooled distillation-side tokens; ``raw`` skips the student projection."""
        enc = self.encoder(x.to(self.dtype))
        tokens = enc.pixel_tokens if self.cfg.role_layout == "losetok" else enc.semantic_tokens
        pooled = pool(tokens)
        return pooled if raw else self.student_proj(pooled)
