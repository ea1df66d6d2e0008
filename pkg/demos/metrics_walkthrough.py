"""
Reconstruction metrics on degraded images
=========================================

PSNR, windowed SSIM and the desk-scale Frechet distance as noise grows.
"""

import numpy as np
import torch

from hybridtok.data import ShapesSpec, shapes_dataset
from hybridtok.evaluation.metrics import FidFeatureNet, desk_fid, psnr, ssim

ds = shapes_dataset(ShapesSpec(num_samples=200, seed=3))
x = ds.batch(np.arange(len(ds)), torch.float64).data
extractor = FidFeatureNet().double()
real = extractor(x).numpy()
rng = np.random.default_rng(0)

# desk-FID uses a frozen random extractor: compare values only with each other
print(f"{'noise':>6} {'psnr':>7} {'ssim':>6} {'desk-FID':>9}")
for sigma in (0.0, 0.05, 0.1, 0.2, 0.4):
    noisy = (x + sigma * torch.from_numpy(rng.standard_normal(x.shape))).clamp(-1, 1)
    fid = desk_fid(real, extractor(noisy).numpy())
    print(f"{sigma:>6.2f} {psnr(x, noisy):>7.2f} {ssim(x, noisy):>6.3f} {fid:>9.4f}")
