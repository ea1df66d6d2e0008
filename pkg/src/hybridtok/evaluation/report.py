"""Run a trained tokenizer over a dataset and collect every metric."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch

from ..data import ArrayDataset
from ..errors import ProbeDataError
from ..quantizer import usage_stats
from .metrics import FidFeatureNet, desk_fid, psnr_per_image, ssim_per_image
from .probe import linear_probe, silhouette


@dataclass
class MetricReport:
    psnr_mean: float
    ssim_mean: float
    desk_fid: float
    recon_mse: float
    probe_acc: Optional[float]
    silhouette: Optional[float]
    usage: list[dict] = field(default_factory=list)
    num_samples: int = 0
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def check_finite(self) -> bool:
        values = [self.psnr_mean, self.ssim_mean, self.desk_fid, self.recon_mse]
        values += [v for v in (self.probe_acc, self.silhouette) if v is not None]
        return all(math.isfinite(v) for v in values)


@torch.no_grad()
def collect_outputs(model, dataset: ArrayDataset, batch_size: int = 100):
    """Reconstructions, usage counts and raw pooled distillation-side vectors."""
    model.eval()
    recons, pooled = [], []
    counts = None
    for batch in dataset.iter_batches(batch_size, model.dtype):
        out = model(batch.data)
        recons.append(out.recon)
        tokens = out.encoded.pixel_tokens if model.cfg.role_layout == "losetok" else out.encoded.semantic_tokens
        pooled.append(tokens.mean(dim=1))
        counts = out.quant.usage_counts if counts is None else counts + out.quant.usage_counts
    return torch.cat(recons), counts, torch.cat(pooled)


def evaluate(model, dataset: ArrayDataset, seed: int = 0, batch_size: int = 100) -> MetricReport:
    """Reconstruction quality, desk-FID, codebook usage and (with labels) probe/silhouette."""
    recon, counts, pooled = collect_outputs(model, dataset, batch_size)
    x = torch.cat([b.data for b in dataset.iter_batches(batch_size, model.dtype)])
    extractor = FidFeatureNet(x.shape[-1]).to(model.dtype)
    fid = desk_fid(extractor(x).double().numpy(), extractor(recon).double().numpy())
    usage = [
        {"codebook": i, "used_fraction": uf, "perplexity": ppl}
        for i, (uf, ppl) in enumerate(usage_stats(counts))
    ]
    probe_acc = sil = None
    notes = ["desk_fid uses a frozen random extractor; not comparable to Inception FID"]
    if dataset.labels is not None and (dataset.labels >= 0).all():
        feats = pooled.double().numpy()
        try:
            probe_acc = linear_probe(feats, dataset.labels, seed=seed)
            sil = silhouette(feats, dataset.labels)
        except ProbeDataError as exc:
            notes.append(f"probe skipped: {exc}")
    return MetricReport(
        psnr_mean=float(psnr_per_image(x, recon).mean()),
        ssim_mean=float(ssim_per_image(x, recon).mean()),
        desk_fid=fid,
        recon_mse=float((x - recon).pow(2).mean()),
        probe_acc=probe_acc,
        silhouette=sil,
        usage=usage,
        num_samples=len(dataset),
        notes=notes,
    )
