"""Optimisation loop, learning-rate schedule and checkpoints."""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
from torch import nn

from . import config as cfgmod
from .config import ModelConfig, TrainConfig
from .data import ArrayDataset, ShapesSpec, batch_indices, load_dataset, shapes_dataset
from .distill import build_teacher, cosine_loss, pool
from .encoder import ImageBatch
from .errors import CheckpointMismatchError, ConfigValidationError, NumericError, StateError
from .layers import init_module
from .losses import LossReport, PatchDiscriminator, PerceptualNet, adversarial_losses, perceptual_loss, recon_loss, total_loss
from .model import DTYPES, HybridTokenizer

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"HYBTOK01"
NO_DECAY_KEYS = ("pos_embed", "latent_pos_1d", "mask_token")


def lr_at(step: int, total_steps: int, base_lr: float, warmup_fraction: float) -> float:
    """Linear warmup from 0 to ``base_lr``, then cosine decay to 0 at ``total_steps``."""
    if total_steps <= 0:
        raise ConfigValidationError("total_steps must be > 0")
    if not 0 <= step <= total_steps:
        raise StateError(f"step {step} outside [0, {total_steps}]")
    warmup = int(round(warmup_fraction * total_steps))
    if step < warmup:
        return base_lr * step / warmup
    progress = (step - warmup) / max(1, total_steps - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def decays(name: str, param: torch.Tensor) -> bool:
    return param.ndim >= 2 and not any(k in name for k in NO_DECAY_KEYS)


def make_optimizer(module: nn.Module, train: TrainConfig) -> torch.optim.AdamW:
    decay, no_decay = [], []
    for name, p in module.named_parameters():
        if p.requires_grad:
            (decay if decays(name, p) else no_decay).append(p)
    groups = [
        {"params": decay, "weight_decay": train.weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]
    return torch.optim.AdamW(groups, lr=train.base_lr, betas=tuple(train.optimizer_betas))


class Trainer:
    """Owns the model, frozen auxiliaries, optimisers and the step counter."""

    def __init__(self, model_cfg: ModelConfig, train_cfg: TrainConfig, teacher: Optional[nn.Module] = None):
        cfgmod.ensure_valid(model_cfg, train_cfg)
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        dtype = DTYPES[model_cfg.dtype]
        self.model = HybridTokenizer(model_cfg)
        self.teacher = (teacher if teacher is not None else build_teacher(model_cfg)).to(dtype)
        self.perceptual = PerceptualNet(model_cfg.in_channels, model_cfg.seed + 7003).to(dtype) if model_cfg.use_perceptual else None
        self.disc = None
        self.disc_opt = None
        if model_cfg.use_adversarial:
            self.disc = PatchDiscriminator(model_cfg.in_channels)
            init_module(self.disc, model_cfg.seed, prefix="disc.")
            self.disc.to(dtype)
            self.disc_opt = make_optimizer(self.disc, train_cfg)
        self.opt = make_optimizer(self.model, train_cfg)
        self.step = 0
        self.usage_window = torch.zeros(model_cfg.num_codebooks, model_cfg.entries_per_codebook, dtype=torch.long)
        self.revive_rng = torch.Generator().manual_seed(model_cfg.seed + 7004)

    @property
    def dtype(self) -> torch.dtype:
        return DTYPES[self.model_cfg.dtype]

    @property
    def config_hash(self) -> str:
        return cfgmod.config_hash(self.model_cfg, self.train_cfg)

    def adversarial_active(self) -> bool:
        return self.disc is not None and self.step >= self.train_cfg.adversarial_start_step

    def compute_losses(self, batch: ImageBatch, lambda_sem: Optional[float] = None):
        """Forward pass and loss report; returns ``(report, forward_output, disc_term)``."""
        m = self.model_cfg
        x = batch.data.to(self.dtype)
        out = self.model(x)
        teacher_vec = pool(self.teacher(batch).tokens.to(self.dtype))
        components = {
            "recon": recon_loss(x, out.recon, m.recon_kind),
            "codebook": out.quant.codebook_loss,
            "commit": out.quant.commit_loss,
            "semantic": cosine_loss(out.semantic, teacher_vec),
        }
        if self.perceptual is not None:
            components["perceptual"] = perceptual_loss(x, out.recon, self.perceptual)
        disc_term = None
        if self.adversarial_active():
            gen_term, disc_term = adversarial_losses(
                x, out.recon, self.disc, self.step, self.train_cfg.adversarial_start_step
            )
            components["adversarial"] = gen_term
        lam_sem = m.lambda_sem if lambda_sem is None else lambda_sem
        report = total_loss(components, m.lambda_per, m.lambda_adv, lam_sem)
        return report, out, disc_term

    def _set_lr(self, lr: float) -> None:
        for opt in (self.opt, self.disc_opt):
            if opt is not None:
                for group in opt.param_groups:
                    group["lr"] = lr

    def train_step(self, batch: ImageBatch, dump_dir=None) -> LossReport:
        t = self.train_cfg
        lr = lr_at(min(self.step, t.total_steps), t.total_steps, t.base_lr, t.warmup_fraction)
        self._set_lr(lr)
        self.model.train()
        try:
            report, out, disc_term = self.compute_losses(batch)
            if disc_term is not None and not torch.isfinite(disc_term):
                raise NumericError("non-finite loss component: discriminator")
        except NumericError:
            if dump_dir is not None:
                save_checkpoint(self, Path(dump_dir) / "last_good.ckpt")
            raise
        self.opt.zero_grad(set_to_none=True)
        report.total.backward()
        if t.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), t.grad_clip)
        self.opt.step()
        if disc_term is not None:
            self.disc_opt.zero_grad(set_to_none=True)
            disc_term.backward()
            if t.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(self.disc.parameters(), t.grad_clip)
            self.disc_opt.step()
        self.usage_window += out.quant.usage_counts
        self.step += 1
        if self.model_cfg.dead_code_reset and self.step % self.model_cfg.dead_code_window == 0:
            z = self.model.quantizer.proj_in(
                out.encoded.pixel_tokens if self.model_cfg.role_layout == "standard" else out.encoded.semantic_tokens
            )
            self.model.quantizer.revive_dead_entries(self.usage_window, z, self.revive_rng)
            self.usage_window.zero_()
        return report

    def fit(
        self,
        dataset: ArrayDataset,
        total_steps: Optional[int] = None,
        metrics_path=None,
        ckpt_dir=None,
        callback: Optional[Callable[[int, dict], None]] = None,
    ) -> list[dict]:
        """Train until ``total_steps`` (default: the configured budget).

        Batches are a pure function of ``(seed, step)``, so a resumed trainer sees
        the same data as an uninterrupted one. Returns one record per step.
        """
        t = self.train_cfg
        end = t.total_steps if total_steps is None else total_steps
        records = []
        fh = open(metrics_path, "a") if metrics_path is not None else None
        try:
            while self.step < end:
                step = self.step
                idx = batch_indices(self.model_cfg.seed, step, len(dataset), t.batch_size)
                report = self.train_step(dataset.batch(idx, self.dtype), dump_dir=ckpt_dir)
                rec = {"step": step, **report.to_dict()}
                records.append(rec)
                if fh is not None:
                    fh.write(json.dumps({**rec, "wall_time": time.time()}) + "\n")
                if callback is not None:
                    callback(step, rec)
                if t.log_every and step % t.log_every == 0:
                    log.info("step %d total %.4f recon %.4f sem %.4f", step, rec["total"], rec["recon"], rec["semantic"])
                if ckpt_dir is not None and t.checkpoint_every and self.step % t.checkpoint_every == 0:
                    save_checkpoint(self, Path(ckpt_dir) / f"step_{self.step:07d}.ckpt")
        finally:
            if fh is not None:
                fh.close()
        return records

    def named_state(self) -> dict[str, torch.Tensor]:
        """Every array a checkpoint must carry, under stable names."""
        state = {f"model/{k}": v for k, v in self.model.state_dict().items()}
        if self.disc is not None:
            state.update({f"disc/{k}": v for k, v in self.disc.state_dict().items()})
        for prefix, opt in (("opt", self.opt), ("disc_opt", self.disc_opt)):
            if opt is None:
                continue
            for pid, slots in opt.state_dict()["state"].items():
                for key, value in slots.items():
                    state[f"{prefix}/{pid}/{key}"] = torch.as_tensor(value)
        state["usage_window"] = self.usage_window
        state["rng/revive"] = self.revive_rng.get_state()
        return state


def training_data(train: TrainConfig, image_size: int) -> tuple[ArrayDataset, ArrayDataset]:
    """``(train_split, eval_split)`` from ``data_root`` or the built-in shapes generator."""
    if train.data_root:
        full = load_dataset(train.data_root, image_size)
    else:
        full = shapes_dataset(
            ShapesSpec(num_samples=train.num_samples, image_size=image_size, num_classes=train.num_classes, seed=train.data_seed)
        )
    return full.split(train.eval_fraction, train.data_seed)


# -- checkpoint format --------------------------------------------------------
# MAGIC | u64 little-endian manifest length | manifest JSON | raw little-endian arrays


def _np_le(t: torch.Tensor) -> np.ndarray:
    arr = t.detach().cpu().contiguous().numpy()
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False)


def save_checkpoint(trainer: Trainer, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays, entries, offset = [], [], 0
    for name, tensor in trainer.named_state().items():
        arr = _np_le(tensor)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name, "offset": offset, "nbytes": arr.nbytes})
        arrays.append(arr)
        offset += arr.nbytes
    groups = {}
    for prefix, opt in (("opt", trainer.opt), ("disc_opt", trainer.disc_opt)):
        if opt is not None:
            groups[prefix] = opt.state_dict()["param_groups"]
    manifest = {
        "format": 1,
        "config_hash": trainer.config_hash,
        "config": cfgmod.serialize(trainer.model_cfg, trainer.train_cfg),
        "step": trainer.step,
        "tensors": entries,
        "param_groups": groups,
    }
    blob = json.dumps(manifest).encode()
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in arrays:
            fh.write(arr.tobytes())
    tmp.replace(path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Parse a checkpoint into ``(manifest, {name: array})``."""
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointMismatchError(f"{path} is not a checkpoint")
    (length,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16 : 16 + length])
    base = 16 + length
    arrays = {}
    for e in manifest["tensors"]:
        dt = np.dtype(e["dtype"]).newbyteorder("<")
        start = base + e["offset"]
        arrays[e["name"]] = np.frombuffer(raw[start : start + e["nbytes"]], dtype=dt).reshape(e["shape"]).copy()
    return manifest, arrays


def load_checkpoint(
    path,
    model_cfg: Optional[ModelConfig] = None,
    train_cfg: Optional[TrainConfig] = None,
    allow_mismatch: bool = False,
    teacher: Optional[nn.Module] = None,
) -> Trainer:
    """Rebuild a :class:`Trainer` from a checkpoint.

    By default the configs stored in the checkpoint are used. Explicit configs
    must hash-match unless ``allow_mismatch``; array shapes must match always.
    """
    manifest, arrays = read_checkpoint(path)
    stored_model, stored_train = cfgmod.loads_config(manifest["config"])
    if model_cfg is None and train_cfg is None:
        model_cfg, train_cfg = stored_model, stored_train
    else:
        model_cfg = model_cfg or stored_model
        train_cfg = train_cfg or stored_train
        if cfgmod.config_hash(model_cfg, train_cfg) != manifest["config_hash"] and not allow_mismatch:
            raise CheckpointMismatchError(
                f"config hash {cfgmod.config_hash(model_cfg, train_cfg)} != checkpoint {manifest['config_hash']}"
            )
    trainer = Trainer(model_cfg, train_cfg, teacher=teacher)
    expected = trainer.named_state()
    for name, tensor in expected.items():
        if name.startswith(("opt/", "disc_opt/")):
            continue
        if name not in arrays:
            raise CheckpointMismatchError(f"checkpoint lacks {name}")
        if tuple(arrays[name].shape) != tuple(tensor.shape):
            raise CheckpointMismatchError(f"{name}: shape {arrays[name].shape} != expected {tuple(tensor.shape)}")
    extra = [n for n in arrays if n.startswith(("model/", "disc/")) and n not in expected]
    if extra:
        raise CheckpointMismatchError(f"unexpected arrays in checkpoint: {extra[:5]}")

    def sub(prefix):
        return {k[len(prefix) :]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith(prefix)}

    trainer.model.load_state_dict(sub("model/"))
    if trainer.disc is not None:
        trainer.disc.load_state_dict(sub("disc/"))
    for prefix, opt in (("opt", trainer.opt), ("disc_opt", trainer.disc_opt)):
        if opt is None:
            continue
        state = {}
        for name, value in sub(f"{prefix}/").items():
            pid, key = name.split("/")
            state.setdefault(int(pid), {})[key] = value
        try:
            opt.load_state_dict({"state": state, "param_groups": manifest["param_groups"][prefix]})
        except (KeyError, ValueError) as exc:
            raise CheckpointMismatchError(f"optimizer state mismatch: {exc}") from exc
    trainer.usage_window = torch.from_numpy(arrays["usage_window"])
    trainer.revive_rng.set_state(torch.from_numpy(arrays["rng/revive"]))
    trainer.step = manifest["step"]
    return trainer
