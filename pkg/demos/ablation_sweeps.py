"""
Design-axis sweeps
==================

Learnable-token count, decoder size and the role-reversed layout, each trained
for the same budget on the same batches. Results and plots land in
``runs/ablations``. The first argument sets the per-point step budget.
"""

import sys

import torch

from hybridtok.config import load_profile
from hybridtok.evaluation import run_ablation

torch.set_num_threads(1)
budget = int(sys.argv[1]) if len(sys.argv) > 1 else 300
seeds = (0, 1, 2)
model_cfg, train_cfg = load_profile("smoke")

for axis in ("token_count", "decoder_size", "losetok"):
    result = run_ablation(axis, model_cfg, train_cfg, budget, seeds=seeds, out_dir="runs/ablations")
    print(axis)
    for setting in result.settings():
        mse = result.mean("recon_mse")[str(setting)]
        probe = result.mean("probe_acc")[str(setting)]
        params = next(p.decoder_params for p in result.points if p.setting == setting)
        print(f"  {setting!s:>9}: recon mse {mse:.4f}  probe {probe:.3f}  decoder params {params}")
