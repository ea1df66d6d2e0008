"""
Train the smoke tokenizer and inspect it
========================================

Trains the bundled smoke profile on synthetic shapes, then reports
reconstruction quality, codebook usage and how well the distilled tokens
separate the shape classes. Pass a step count to shorten the run.
"""

import json
import sys
from pathlib import Path

import torch

from hybridtok.cli import main as cli_main
from hybridtok.config import load_profile, replace
from hybridtok.evaluation import evaluate
from hybridtok.export import write_reconstructions
from hybridtok.training import Trainer, save_checkpoint, training_data

torch.set_num_threads(1)
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
out = Path("runs/demo_smoke")
out.mkdir(parents=True, exist_ok=True)

model_cfg, train_cfg = load_profile("smoke")
train_cfg = replace(train_cfg, total_steps=steps)
train_set, eval_set = training_data(train_cfg, model_cfg.image_size)

# batches depend only on (seed, step), so this run is reproducible bit for bit
trainer = Trainer(model_cfg, train_cfg)
records = trainer.fit(train_set, metrics_path=out / "metrics.jsonl")
print(f"recon loss: step 10 {records[min(10, steps - 1)]['recon']:.4f} -> last {records[-1]['recon']:.4f}")
save_checkpoint(trainer, out / "final.ckpt")

report = evaluate(trainer.model, eval_set, seed=model_cfg.seed)
print(json.dumps({k: v for k, v in report.to_dict().items() if k != "notes"}, indent=1))

# a few reconstructions next to their PSNR/SSIM
batch = eval_set.batch(range(8), trainer.dtype)
with torch.no_grad():
    recon = trainer.model.eval()(batch.data).recon
for row in write_reconstructions(out / "recon", batch.sample_ids, batch.data, recon):
    print(row)

# loss curves through the command-line entry point
cli_main(["plot", "--metrics", str(out / "metrics.jsonl"), "--out", str(out / "plots")])
