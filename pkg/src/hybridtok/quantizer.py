"""Multi-codebook vector quantisation with straight-through gradients.

Each token's code vector of width ``code_dim_total`` is split into ``C``
sub-vectors of width ``d``; sub-vector ``c`` is snapped to its nearest entry of
codebook ``c``. One token therefore takes one of ``V ** C`` values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import EmptyStatsError, NumericError, ShapeError
from .layers import named_generator


@dataclass
class QuantizeResult:
    indices: torch.Tensor  # B x N x C, int64
    quantized: torch.Tensor  # B x N x code_dim_total
    ste_codes: torch.Tensor  # forward value == quantized, gradient == identity w.r.t. z
    codebook_loss: torch.Tensor
    commit_loss: torch.Tensor
    usage_counts: torch.Tensor  # C x V, int64


def nearest_indices(z: torch.Tensor, books: torch.Tensor) -> torch.Tensor:
    """Index of the Euclidean-nearest entry per sub-vector, lowest index on ties.

    ``z`` is ``... x C x d`` and ``books`` is ``C x V x d``.
    """
    # explicit differences keep exact ties exact, unlike the |a|^2 - 2ab + |b|^2 expansion
    diff = z.unsqueeze(-2) - books
    dist = diff.pow(2).sum(-1)
    return dist.argmin(dim=-1)


def gather_codes(indices: torch.Tensor, books: torch.Tensor) -> torch.Tensor:
    """``... x C`` indices to ``... x (C*d)`` concatenated entries."""
    c, _, d = books.shape
    flat = indices.reshape(-1, c)
    picked = books[torch.arange(c).unsqueeze(0), flat]  # K x C x d
    return picked.reshape(*indices.shape[:-1], c * d)


def codebook_losses(z: torch.Tensor, q: torch.Tensor, beta: float) -> tuple[torch.Tensor, torch.Tensor]:
    """``(mean |sg[z] - q|^2, beta * mean |z - sg[q]|^2)``."""
    if z.shape != q.shape:
        raise ShapeError(f"z {tuple(z.shape)} and q {tuple(q.shape)} differ")
    codebook = F.mse_loss(q, z.detach())
    commit = beta * F.mse_loss(z, q.detach())
    return codebook, commit


def quantize(z: torch.Tensor, books: torch.Tensor, beta: float = 0.25, normalize: bool = False) -> QuantizeResult:
    """Quantise ``z`` (``B x N x C*d``) against ``books`` (``C x V x d``)."""
    if torch.isnan(z).any() or not torch.isfinite(z).all():
        raise NumericError("non-finite values in quantizer input")
    c, v, d = books.shape
    if z.shape[-1] != c * d:
        raise ShapeError(f"code width {z.shape[-1]} != {c} x {d}")
    if normalize:
        z = F.normalize(z.reshape(*z.shape[:-1], c, d), dim=-1).reshape(z.shape)
        books = F.normalize(books, dim=-1)
    sub = z.detach().reshape(*z.shape[:-1], c, d)
    indices = nearest_indices(sub, books.detach())
    q = gather_codes(indices, books)
    codebook, commit = codebook_losses(z, q, beta)
    ste = z + (q - z).detach()
    counts = torch.stack([torch.bincount(indices[..., i].reshape(-1), minlength=v) for i in range(c)])
    return QuantizeResult(indices, q, ste, codebook, commit, counts)


def usage_stats(counts) -> list[tuple[float, float]]:
    """Per-codebook ``(used_fraction, perplexity)`` from ``C x V`` counts."""
    counts = torch.as_tensor(counts, dtype=torch.float64)
    if counts.ndim == 1:
        counts = counts.unsqueeze(0)
    if (counts < 0).any():
        raise NumericError("negative usage counts")
    out = []
    for row in counts:
        total = row.sum()
        if total == 0:
            raise EmptyStatsError("codebook has no recorded usage")
        p = row / total
        nz = p[p > 0]
        entropy = -(nz * nz.log()).sum().item()
        out.append(((row > 0).sum().item() / row.numel(), math.exp(entropy)))
    return out


class MultiCodebookQuantizer(nn.Module):
    """Projection to code space followed by ``C`` independent codebooks of ``V`` entries."""

    def __init__(
        self,
        in_dim: int,
        num_codebooks: int,
        entries: int,
        code_dim_total: int,
        beta: float = 0.25,
        normalize: bool = False,
    ):
        super().__init__()
        if code_dim_total % num_codebooks:
            raise ShapeError("code_dim_total not divisible by C")
        self.beta = beta
        self.normalize = normalize
        self.proj_in = nn.Linear(in_dim, code_dim_total)
        self.books = nn.Parameter(torch.zeros(num_codebooks, entries, code_dim_total // num_codebooks))

    @property
    def num_codebooks(self) -> int:
        return self.books.shape[0]

    @property
    def entries(self) -> int:
        return self.books.shape[1]

    def reset_parameters(self, seed: int) -> None:
        bound = 1.0 / self.entries
        with torch.no_grad():
            g = named_generator(seed, "quantizer.books")
            self.books.uniform_(-bound, bound, generator=g)

    def quantize(self, z: torch.Tensor) -> QuantizeResult:
        return quantize(z, self.books, self.beta, self.normalize)

    def lookup(self, indices: torch.Tensor) -> torch.Tensor:
        books = F.normalize(self.books, dim=-1) if self.normalize else self.books
        return gather_codes(indices, books)

    def forward(self, h: torch.Tensor) -> QuantizeResult:
        return self.quantize(self.proj_in(h))

    @torch.no_grad()
    def revive_dead_entries(self, window_counts: torch.Tensor, z: torch.Tensor, generator: torch.Generator) -> int:
        """Re-initialise entries unused over a window from randomly chosen inputs ``z``."""
        c, _, d = self.books.shape
        sub = z.detach().reshape(-1, c, d)
        revived = 0
        for i in range(c):
            dead = (window_counts[i] == 0).nonzero().flatten()
            if len(dead) == 0:
                continue
            pick = torch.randint(0, sub.shape[0], (len(dead),), generator=generator)
            self.books[i, dead] = sub[pick, i].to(self.books.dtype)
            revived += len(dead)
        return revived
