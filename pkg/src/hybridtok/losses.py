"""Reconstruction, perceptual and adversarial terms and the combined objective."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn
from torch.func import functional_call

from .errors import NumericError, ShapeError, StateError
from .layers import frozen, random_conv_init


def _nchw(x: torch.Tensor) -> torch.Tensor:
    return x.permute(0, 3, 1, 2)


def recon_loss(x: torch.Tensor, xhat: torch.Tensor, kind: str = "mse") -> torch.Tensor:
    if x.shape != xhat.shape:
        raise ShapeError(f"x {tuple(x.shape)} and xhat {tuple(xhat.shape)} differ")
    if kind == "l1":
        return (x - xhat).abs().mean()
    return (x - xhat).pow(2).mean()


class PerceptualNet(nn.Module):
    """Frozen seeded conv stack exposing features at three depths."""

    def __init__(self, channels: int = 3, seed: int = 0):
        super().__init__()
        self.stages = nn.ModuleList(
            [
                nn.Sequential(nn.Conv2d(channels, 16, 3, padding=1), nn.ReLU()),
                nn.Sequential(nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.ReLU()),
                nn.Sequential(nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.ReLU()),
            ]
        )
        random_conv_init(self, seed)
        frozen(self)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        h = _nchw(x)
        feats = []
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        return feats


def perceptual_loss(x: torch.Tensor, xhat: torch.Tensor, feat_net: PerceptualNet) -> torch.Tensor:
    """Sum over the three depths of the mean squared feature distance."""
    if x.shape != xhat.shape:
        raise ShapeError(f"x {tuple(x.shape)} and xhat {tuple(xhat.shape)} differ")
    with torch.no_grad():
        target = feat_net.features(x)
    pred = feat_net.features(xhat)
    return sum((a - b).pow(2).mean() for a, b in zip(pred, target))


class PatchDiscriminator(nn.Module):
    """Four strided convs producing a grid of real/fake logits."""

    def __init__(self, channels: int = 3, width: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(channels, width, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(width, 2 * width, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(2 * width, 2 * width, 3, stride=1, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(2 * width, 1, 3, stride=1, padding=1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(_nchw(x))


def adversarial_losses(
    x: torch.Tensor,
    xhat: torch.Tensor,
    disc: nn.Module,
    step: Optional[int] = None,
    start_step: int = 0,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Hinge losses ``(gen_term, disc_term)``.

    ``gen_term`` is computed through a detached copy of the discriminator
    parameters, so it only ever updates the generator; ``disc_term`` sees a
    detached reconstruction, so it only ever updates the discriminator.
    """
    if step is not None and step < start_step:
        raise StateError(f"adversarial loss requested at step {step} < start step {start_step}")
    disc_term = F.relu(1 - disc(x)).mean() + F.relu(1 + disc(xhat.detach())).mean()
    params = {k: v.detach() for k, v in disc.named_parameters()}
    gen_term = -functional_call(disc, params, (xhat,)).mean()
    return gen_term, disc_term


@dataclass
class LossReport:
    recon: torch.Tensor
    codebook: torch.Tensor
    commit: torch.Tensor
    perceptual: torch.Tensor
    adversarial: torch.Tensor
    semantic: torch.Tensor
    pixel_total: torch.Tensor
    total: torch.Tensor

    def to_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name).detach()) for f in fields(self)}


COMPONENTS = ("recon", "codebook", "commit", "perceptual", "adversarial", "semantic")


def total_loss(components: dict, lambda_per: float, lambda_adv: float, lambda_sem: float = 1.0) -> LossReport:
    """Combine loss terms.

    ``pixel_total = recon + codebook + commit + lambda_per*perceptual + lambda_adv*adversarial``
    and ``total = lambda_sem*semantic + pixel_total``. Missing terms count as zero.
    """
    ref = next((v for v in components.values() if isinstance(v, torch.Tensor)), None)
    terms = {}
    for name in COMPONENTS:
        value = components.get(name, 0.0)
        if not isinstance(value, torch.Tensor):
            value = torch.tensor(float(value), dtype=ref.dtype if ref is not None else torch.float32)
        if not math.isfinite(float(value.detach())):
            raise NumericError(f"non-finite loss component: {name}")
        terms[name] = value
    pixel = (
        terms["recon"]
        + terms["codebook"]
        + terms["commit"]
        + lambda_per * terms["perceptual"]
        + lambda_adv * terms["adversarial"]
    )
    total = lambda_sem * terms["semantic"] + pixel
    return LossReport(pixel_total=pixel, total=total, **terms)
