"""Model and training configuration.

Configs are TOML documents with two dotted sections, ``[model]`` and
``[train]``. Absent keys take the desk-scale defaults below; unknown keys are
rejected. ``validate_config`` collects every invariant violation instead of
stopping at the first one.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import os
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

import tomli
import tomli_w

from .errors import (
    ConfigSyntaxError,
    ConfigUnknownKeyError,
    ConfigValidationError,
)

CONFIG_ROOT_ENV = "HYBRIDTOK_CONFIG_ROOT"

# (depth, width, heads)
DECODER_PRESETS = {
    "B": (12, 768, 12),
    "L": (24, 1024, 16),
    "XL": (27, 1152, 16),
}

TEACHER_KINDS = ("frozen_random", "prototype", "file")
POOLINGS = ("mean",)
DECODER_VARIANTS = ("B", "L", "XL", "custom")
ROLE_LAYOUTS = ("standard", "losetok")
DTYPES = ("float32", "float64")
RECON_KINDS = ("mse", "l1")
SCHEDULES = ("cosine_decay",)


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 32
    patch_size: int = 4
    in_channels: int = 3
    encoder_depth: int = 2
    encoder_width: int = 64
    encoder_heads: int = 4
    mlp_ratio: float = 4.0
    decoder_variant: str = "custom"
    decoder_depth: int = 4
    decoder_width: int = 128
    decoder_heads: int = 4
    # shrinks B/L/XL presets: depth and per-head width are multiplied by it
    decoder_scale: float = 1.0
    num_learnable_tokens: int = 16
    num_codebooks: int = 2
    entries_per_codebook: int = 64
    code_dim_total: int = 8
    quant_normalize: bool = False
    dead_code_reset: bool = False
    dead_code_window: int = 200
    beta: float = 0.25
    lambda_per: float = 1.0
    lambda_adv: float = 0.1
    lambda_sem: float = 1.0
    use_perceptual: bool = True
    use_adversarial: bool = False
    recon_kind: str = "mse"
    teacher_kind: str = "prototype"
    teacher_dim: int = 64
    teacher_num_classes: int = 4
    teacher_file: str = ""
    pooling: str = "mean"
    role_layout: str = "standard"
    dtype: str = "float32"
    seed: int = 0

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_size**2

    @property
    def code_dim(self) -> int:
        return self.code_dim_total // self.num_codebooks

    @property
    def capacity(self) -> int:
        """Number of distinct codes a single token can take, ``V ** C``."""
        return self.entries_per_codebook**self.num_codebooks

    def decoder_dims(self) -> tuple[int, int, int]:
        """Resolve the decoder variant to ``(depth, width, heads)``."""
        if self.decoder_variant == "custom":
            return self.decoder_depth, self.decoder_width, self.decoder_heads
        depth, width, heads = DECODER_PRESETS[self.decoder_variant]
        if self.decoder_scale == 1.0:
            return depth, width, heads
        head_dim = width // heads
        depth = max(1, round(depth * self.decoder_scale))
        width = heads * max(1, math.ceil(head_dim * self.decoder_scale))
        return depth, width, heads


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 1e-3
    warmup_fraction: float = 0.05
    schedule: str = "cosine_decay"
    optimizer_betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.02
    batch_size: int = 32
    total_steps: int = 1000
    ema_enabled: bool = False
    adversarial_start_step: int = 500
    grad_clip: float = 1.0
    log_every: int = 10
    checkpoint_every: int = 0
    dump_every: int = 0
    data_root: str = ""
    num_samples: int = 2000
    num_classes: int = 4
    data_seed: int = 0
    eval_fraction: float = 0.2


SECTIONS = {"model": ModelConfig, "train": TrainConfig}


def _coerce(cls: type, name: str, value: Any) -> Any:
    default = getattr(cls(), name)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigValidationError(f"{name}: expected boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigValidationError(f"{name}: expected integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigValidationError(f"{name}: expected number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise ConfigValidationError(f"{name}: expected {len(default)} numbers, got {value!r}")
        return tuple(float(v) for v in value)
    if not isinstance(value, str):
        raise ConfigValidationError(f"{name}: expected string, got {value!r}")
    return value


def from_dict(doc: dict[str, Any]) -> tuple[ModelConfig, TrainConfig]:
    """Build configs from a parsed ``{section: {key: value}}`` tree."""
    for section in doc:
        if section not in SECTIONS:
            raise ConfigUnknownKeyError(f"unknown section {section!r}")
    built = []
    for section, cls in SECTIONS.items():
        values = doc.get(section, {})
        if not isinstance(values, dict):
            raise ConfigSyntaxError(f"section {section!r} must be a table")
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key not in known:
                raise ConfigUnknownKeyError(f"unknown key {section}.{key}")
            kwargs[key] = _coerce(cls, key, value)
        built.append(cls(**kwargs))
    return built[0], built[1]


def to_dict(model: ModelConfig, train: TrainConfig) -> dict[str, dict[str, Any]]:
    out = {}
    for section, cfg in (("model", model), ("train", train)):
        values = dataclasses.asdict(cfg)
        out[section] = {k: list(v) if isinstance(v, tuple) else v for k, v in values.items()}
    return out


def serialize(model: ModelConfig, train: TrainConfig) -> str:
    return tomli_w.dumps(to_dict(model, train))


def config_hash(model: ModelConfig, train: TrainConfig) -> str:
    return hashlib.sha256(serialize(model, train).encode()).hexdigest()[:16]


def parse_override(item: str) -> tuple[str, str, Any]:
    """Parse ``section.key=value``; the value is read as a TOML scalar when possible."""
    if "=" not in item:
        raise ConfigSyntaxError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    if key.count(".") != 1:
        raise ConfigSyntaxError(f"override key {key!r} must be section.key")
    section, name = key.strip().split(".")
    try:
        value = tomli.loads(f"v = {raw.strip()}")["v"]
    except tomli.TOMLDecodeError:
        value = raw.strip()
    return section, name, value


def _resolve_path(path: str | os.PathLike) -> Path:
    p = Path(path)
    root = os.environ.get(CONFIG_ROOT_ENV)
    if not p.is_absolute() and root and not p.exists():
        p = Path(root) / p
    return p


def loads_config(text: str, overrides: Iterable[str] = ()) -> tuple[ModelConfig, TrainConfig]:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigSyntaxError(str(exc)) from exc
    for item in overrides:
        section, name, value = parse_override(item)
        doc.setdefault(section, {})[name] = value
    return from_dict(doc)


def load_config(
    path: str | os.PathLike | None = None, overrides: Iterable[str] = ()
) -> tuple[ModelConfig, TrainConfig]:
    """Read a config file, fill defaults and apply ``--set`` style overrides.

    Relative paths that do not exist are looked up under ``$HYBRIDTOK_CONFIG_ROOT``.
    Passing ``None`` yields the desk defaults.
    """
    text = ""
    if path is not None:
        resolved = _resolve_path(path)
        try:
            text = resolved.read_text()
        except OSError as exc:
            raise ConfigSyntaxError(f"cannot read {resolved}: {exc}") from exc
    return loads_config(text, overrides)


def load_profile(name: str, overrides: Iterable[str] = ()) -> tuple[ModelConfig, TrainConfig]:
    """Load one of the bundled profiles: ``smoke``, ``desk`` or ``full_scale``."""
    text = resources.files("hybridtok.configs").joinpath(f"{name}.toml").read_text()
    return loads_config(text, overrides)


def validate_config(model: ModelConfig, train: TrainConfig) -> list[str]:
    """Return every violated invariant; an empty list means the pair is valid."""
    errs = []
    m, t = model, train
    if m.image_size < 1 or m.patch_size < 1 or m.image_size % m.patch_size:
        errs.append("image not patch-divisible")
    if m.in_channels < 1:
        errs.append("in_channels must be >= 1")
    if m.num_learnable_tokens < 1:
        errs.append("num_learnable_tokens must be >= 1")
    if m.num_codebooks < 1:
        errs.append("num_codebooks must be >= 1")
    elif m.code_dim_total < 1 or m.code_dim_total % m.num_codebooks:
        errs.append("code_dim_total not divisible by C")
    if m.entries_per_codebook < 2:
        errs.append("entries_per_codebook must be >= 2")
    if m.encoder_depth < 1 or m.encoder_heads < 1 or m.encoder_width % max(m.encoder_heads, 1):
        errs.append("encoder width not divisible by heads")
    if m.decoder_variant not in DECODER_VARIANTS:
        errs.append(f"decoder_variant must be one of {DECODER_VARIANTS}")
    else:
        depth, width, heads = m.decoder_dims()
        if depth < 1 or heads < 1 or width % heads:
            errs.append("decoder width not divisible by heads")
    if m.decoder_scale <= 0:
        errs.append("decoder_scale must be > 0")
    if m.mlp_ratio <= 0:
        errs.append("mlp_ratio must be > 0")
    for name in ("beta", "lambda_per", "lambda_adv", "lambda_sem"):
        if getattr(m, name) < 0:
            errs.append(f"{name} must be >= 0")
    if m.dead_code_window < 1:
        errs.append("dead_code_window must be >= 1")
    if m.teacher_kind not in TEACHER_KINDS:
        errs.append(f"teacher_kind must be one of {TEACHER_KINDS}")
    if m.teacher_kind == "file" and not m.teacher_file:
        errs.append("teacher_file required for file teacher")
    if m.teacher_dim < 1:
        errs.append("teacher_dim must be >= 1")
    if m.teacher_num_classes < 1:
        errs.append("teacher_num_classes must be >= 1")
    if m.pooling not in POOLINGS:
        errs.append(f"pooling must be one of {POOLINGS}")
    if m.role_layout not in ROLE_LAYOUTS:
        errs.append(f"role_layout must be one of {ROLE_LAYOUTS}")
    if m.dtype not in DTYPES:
        errs.append(f"dtype must be one of {DTYPES}")
    if m.recon_kind not in RECON_KINDS:
        errs.append(f"recon_kind must be one of {RECON_KINDS}")

    if not t.base_lr > 0:
        errs.append("base_lr must be > 0")
    if not 0 <= t.warmup_fraction < 1:
        errs.append("warmup_fraction must be in [0, 1)")
    if t.schedule not in SCHEDULES:
        errs.append(f"schedule must be one of {SCHEDULES}")
    if not all(0 <= b < 1 for b in t.optimizer_betas):
        errs.append("optimizer_betas must be in [0, 1)")
    if t.weight_decay < 0:
        errs.append("weight_decay must be >= 0")
    if t.batch_size < 1:
        errs.append("batch_size must be >= 1")
    if t.total_steps < 1:
        errs.append("total_steps must be >= 1")
    if t.ema_enabled:
        errs.append("ema_enabled is not supported")
    if t.adversarial_start_step < 0:
        errs.append("adversarial_start_step must be >= 0")
    if t.grad_clip < 0:
        errs.append("grad_clip must be >= 0")
    if t.num_samples < 2 or t.num_classes < 1:
        errs.append("num_samples must be >= 2 and num_classes >= 1")
    if not 0 < t.eval_fraction < 1:
        errs.append("eval_fraction must be in (0, 1)")
    return errs


def ensure_valid(model: ModelConfig, train: TrainConfig) -> None:
    errs = validate_config(model, train)
    if errs:
        raise ConfigValidationError("; ".join(errs))


def replace(cfg, **changes):
    return dataclasses.replace(cfg, **changes)

