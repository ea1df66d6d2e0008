"""Fixed-budget sweeps over one design axis, several seeds per setting."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..config import ModelConfig, TrainConfig, replace
from ..data import ArrayDataset
from ..decoder import count_params
from ..errors import ConfigValidationError
from ..training import Trainer, training_data
from .report import evaluate

log = logging.getLogger(__name__)

AXES = ("token_count", "teacher_kind", "decoder_size", "losetok")
DEFAULT_SETTINGS = {
    "token_count": [4, 16, 64],
    "teacher_kind": ["frozen_random", "prototype"],
    "decoder_size": ["B", "L", "XL"],
    "losetok": ["standard", "losetok"],
}
# B/L/XL shrunk to desk size: 1/16 of the depth and per-head width
DESK_DECODER_SCALE = 1 / 16
PLOT_METRICS = ("recon_mse", "probe_acc", "psnr_mean", "desk_fid")


@dataclass
class AblationPoint:
    setting: object
    seed: int
    metrics: dict
    decoder_params: int
    final_train_loss: float


@dataclass
class AblationResult:
    axis: str
    budget: int
    seeds: list[int]
    points: list[AblationPoint] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def settings(self) -> list:
        seen = []
        for p in self.points:
            if p.setting not in seen:
                seen.append(p.setting)
        return seen

    def metric(self, name: str, setting, seed: Optional[int] = None) -> list[float]:
        return [
            p.metrics[name]
            for p in self.points
            if p.setting == setting and (seed is None or p.seed == seed)
        ]

    def mean(self, name: str) -> dict:
        """Seed-mean per setting; ``None`` where any seed lacks the metric."""
        out = {}
        for s in self.settings():
            values = self.metric(name, s)
            out[str(s)] = None if any(v is None for v in values) else float(np.mean(values))
        return out

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=str)


def apply_setting(axis: str, model: ModelConfig, setting) -> ModelConfig:
    if axis == "token_count":
        return replace(model, num_learnable_tokens=int(setting))
    if axis == "teacher_kind":
        return replace(model, teacher_kind=str(setting))
    if axis == "decoder_size":
        scale = model.decoder_scale if model.decoder_scale != 1.0 else DESK_DECODER_SCALE
        return replace(model, decoder_variant=str(setting), decoder_scale=scale)
    if axis == "losetok":
        return replace(model, role_layout=str(setting))
    raise ConfigValidationError(f"unknown ablation axis {axis!r}; expected one of {AXES}")


def count_inversions(values: Sequence[float], increasing: bool) -> int:
    """Adjacent pairs that break the expected direction (ties never count)."""
    pairs = zip(values[:-1], values[1:])
    if increasing:
        return sum(b < a for a, b in pairs)
    return sum(b > a for a, b in pairs)


def run_ablation(
    axis: str,
    model: ModelConfig,
    train: TrainConfig,
    budget: int,
    settings: Optional[Sequence] = None,
    seeds: Sequence[int] = (0, 1, 2),
    out_dir=None,
    data: Optional[tuple[ArrayDataset, ArrayDataset]] = None,
) -> AblationResult:
    """Train every ``(setting, seed)`` for ``budget`` steps on identical data and evaluate.

    Seeds are shared across settings, and batches depend only on ``(seed, step)``,
    so points differ only in the swept setting.
    """
    if budget <= 0:
        raise ConfigValidationError("ablation budget must be > 0")
    if axis not in AXES:
        raise ConfigValidationError(f"unknown ablation axis {axis!r}; expected one of {AXES}")
    settings = list(DEFAULT_SETTINGS[axis] if settings is None else settings)
    train = replace(train, total_steps=budget)
    train_set, eval_set = data if data is not None else training_data(train, model.image_size)
    result = AblationResult(axis, budget, list(seeds))
    if axis == "teacher_kind":
        result.notes.append("teacher comparison is measured by probe accuracy, not downstream benchmarks")
    for setting in settings:
        for seed in seeds:
            cfg = apply_setting(axis, replace(model, seed=seed), setting)
            trainer = Trainer(cfg, train)
            records = trainer.fit(train_set)
            report = evaluate(trainer.model, eval_set, seed=seed)
            point = AblationPoint(setting, seed, report.to_dict(), count_params(trainer.model.decoder), records[-1]["total"])
            result.points.append(point)
            log.info("%s=%s seed=%d mse=%.4f probe=%s", axis, setting, seed, report.recon_mse, report.probe_acc)
    if out_dir is not None:
        write_ablation(result, out_dir)
    return result


def write_ablation(result: AblationResult, out_dir) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"ablation_{result.axis}.json").write_text(result.to_json())
    labels = [str(s) for s in result.settings()]
    for name in PLOT_METRICS:
        if any(p.metrics.get(name) is None for p in result.points):
            continue
        fig, ax = plt.subplots(figsize=(4, 3))
        for seed in result.seeds:
            ax.plot(labels, [result.metric(name, s, seed)[0] for s in result.settings()], marker="o", label=f"seed {seed}")
        ax.set_xlabel(result.axis)
        ax.set_ylabel("desk-FID" if name == "desk_fid" else name)
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out / f"ablation_{result.axis}_{name}.png", dpi=100)
        plt.close(fig)
