"""
What distillation buys the learnable tokens
===========================================

Train the same tokenizer twice, once with the cosine distillation term and
once with its weight set to zero, then probe the pooled learnable tokens for
the shape class.
"""

import sys

import torch

from hybridtok.config import load_profile, replace
from hybridtok.evaluation import evaluate
from hybridtok.training import Trainer, training_data

torch.set_num_threads(1)
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1000
model_cfg, train_cfg = load_profile("smoke")
train_cfg = replace(train_cfg, total_steps=steps)
train_set, eval_set = training_data(train_cfg, model_cfg.image_size)

for name, weight in (("distilled", 1.0), ("control", 0.0)):
    trainer = Trainer(replace(model_cfg, lambda_sem=weight), train_cfg)
    trainer.fit(train_set)
    r = evaluate(trainer.model, eval_set, seed=model_cfg.seed)
    print(f"{name:>9}: probe {r.probe_acc:.3f}  silhouette {r.silhouette:+.3f}  recon mse {r.recon_mse:.4f}")
