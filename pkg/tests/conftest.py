import numpy as np
import pytest
import torch

from hybridtok.config import ModelConfig, TrainConfig
from hybridtok.encoder import ImageBatch

torch.set_num_threads(1)

ACCEPTANCE_LINES: list[str] = []


def tiny_configs(**model_changes):
    """A model small enough for finite-difference checks, in float64."""
    model = ModelConfig(
        image_size=8,
        patch_size=4,
        encoder_depth=1,
        encoder_width=16,
        encoder_heads=2,
        decoder_variant="custom",
        decoder_depth=1,
        decoder_width=16,
        decoder_heads=2,
        num_learnable_tokens=2,
        num_codebooks=2,
        entries_per_codebook=4,
        code_dim_total=4,
        teacher_kind="prototype",
        teacher_dim=8,
        teacher_num_classes=2,
        dtype="float64",
        seed=3,
    )
    model = ModelConfig(**{**model.__dict__, **model_changes})
    train = TrainConfig(batch_size=4, total_steps=20, warmup_fraction=0.1, num_samples=16, num_classes=2, log_every=0)
    return model, train


@pytest.fixture
def tiny():
    return tiny_configs()


def random_batch(size=4, image_size=8, seed=0, num_classes=2, dtype=torch.float64):
    rng = np.random.default_rng(seed)
    data = torch.from_numpy(rng.uniform(-1, 1, size=(size, image_size, image_size, 3))).to(dtype)
    labels = torch.arange(size) % num_classes
    return ImageBatch(data, [f"s{i}" for i in range(size)], labels)


@pytest.fixture
def batch():
    return random_batch()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
