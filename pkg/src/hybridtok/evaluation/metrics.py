"""Image-quality and distribution metrics.

All functions take images in ``[-1, 1]`` (tensors or arrays, ``... x H x W x C``)
and map them to ``[0, 1]`` before measuring.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ..errors import NumericError, ShapeError
from ..layers import frozen, random_conv_init

PSNR_CAP = 100.0
SSIM_WINDOW = 8
SSIM_STRIDE = 4
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _unit(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().double().numpy()
    return (np.asarray(x, dtype=np.float64) + 1.0) / 2.0


def psnr(x, xhat) -> float:
    """PSNR in dB over all elements, capped at 100 dB."""
    a, b = _unit(x), _unit(xhat)
    if a.shape != b.shape:
        raise ShapeError(f"shapes {a.shape} and {b.shape} differ")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(1.0 / mse)))


def psnr_per_image(x, xhat) -> np.ndarray:
    return np.array([psnr(a, b) for a, b in zip(x, xhat)])


def _gray(img: np.ndarray) -> np.ndarray:
    return img.mean(axis=-1) if img.ndim == 3 else img


def _ssim_single(a: np.ndarray, b: np.ndarray) -> float:
    h, w = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError(f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    wa = np.lib.stride_tricks.sliding_window_view(a, (SSIM_WINDOW, SSIM_WINDOW))[::SSIM_STRIDE, ::SSIM_STRIDE]
    wb = np.lib.stride_tricks.sliding_window_view(b, (SSIM_WINDOW, SSIM_WINDOW))[::SSIM_STRIDE, ::SSIM_STRIDE]
    mu_a = wa.mean(axis=(-1, -2))
    mu_b = wb.mean(axis=(-1, -2))
    var_a = ((wa - mu_a[..., None, None]) ** 2).mean(axis=(-1, -2))
    var_b = ((wb - mu_b[..., None, None]) ** 2).mean(axis=(-1, -2))
    cov = ((wa - mu_a[..., None, None]) * (wb - mu_b[..., None, None])).mean(axis=(-1, -2))
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim_per_image(x, xhat) -> np.ndarray:
    a, b = _unit(x), _unit(xhat)
    if a.shape != b.shape:
        raise ShapeError(f"shapes {a.shape} and {b.shape} differ")
    # H x W and H x W x C are single images; B x H x W x C is a batch
    if a.ndim in (2, 3):
        a, b = a[None], b[None]
    elif a.ndim != 4:
        raise ShapeError(f"unsupported image shape {a.shape}")
    return np.array([_ssim_single(_gray(p), _gray(q)) for p, q in zip(a, b)])


def ssim(x, xhat) -> float:
    """Mean windowed SSIM (uniform 8x8 windows, stride 4) on the channel-mean image."""
    return float(ssim_per_image(x, xhat).mean())


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def frechet_distance(mu1, cov1, mu2, cov2) -> float:
    """Frechet distance between Gaussians via symmetric square roots."""
    mu1, mu2 = np.atleast_1d(mu1).astype(np.float64), np.atleast_1d(mu2).astype(np.float64)
    cov1, cov2 = np.atleast_2d(cov1).astype(np.float64), np.atleast_2d(cov2).astype(np.float64)
    s1 = _sqrtm_psd(cov1)
    middle = s1 @ cov2 @ s1
    tr_sqrt = np.sqrt(np.clip(np.linalg.eigvalsh((middle + middle.T) / 2), 0, None)).sum()
    diff = mu1 - mu2
    return float(max(0.0, diff @ diff + np.trace(cov1) + np.trace(cov2) - 2 * tr_sqrt))


def feature_stats(feats: np.ndarray, jitter: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    feats = np.asarray(feats, dtype=np.float64)
    if not np.isfinite(feats).all():
        raise NumericError("non-finite features")
    if feats.ndim != 2 or len(feats) < 2:
        raise ShapeError("need a samples x features matrix with at least two rows")
    cov = np.cov(feats, rowvar=False).reshape(feats.shape[1], feats.shape[1])
    return feats.mean(axis=0), cov + jitter * np.eye(feats.shape[1])


def desk_fid(real_feats, fake_feats) -> float:
    """Frechet distance between feature sets from a frozen seeded extractor ("desk-FID").

    Not comparable to Inception-based FID values.
    """
    mu_r, cov_r = feature_stats(real_feats)
    mu_f, cov_f = feature_stats(fake_feats)
    return frechet_distance(mu_r, cov_r, mu_f, cov_f)


class FidFeatureNet(nn.Module):
    """Frozen random conv net with global average pooling; 32 features per image."""

    def __init__(self, channels: int = 3, seed: int = 1234, dim: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(channels, 16, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(32, dim, 3, stride=2, padding=1),
            nn.ReLU(),
        )
        random_conv_init(self, seed)
        frozen(self)

    @torch.no_grad()
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.net(x.permute(0, 3, 1, 2).to(self.net[0].weight.dtype))
        return h.mean(dim=(2, 3))
