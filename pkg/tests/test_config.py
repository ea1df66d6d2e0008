import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridtok import config as cfgmod
from hybridtok.config import ModelConfig, TrainConfig, load_config, load_profile, validate_config
from hybridtok.errors import ConfigSyntaxError, ConfigUnknownKeyError, ConfigValidationError


def test_full_scale_profile_matches_training_table():
    m, t = load_profile("full_scale")
    assert (m.num_learnable_tokens, m.num_codebooks, m.entries_per_codebook) == (256, 4, 4096)
    assert m.code_dim_total == 32 and m.patch_size == 16 and m.image_size == 256
    assert (m.encoder_depth, m.encoder_width, m.encoder_heads) == (27, 1152, 16)
    assert t.base_lr == 2e-4 and t.weight_decay == 0.02
    assert t.optimizer_betas == (0.9, 0.95)
    assert t.ema_enabled is False
    assert m.code_dim == 8
    assert validate_config(m, t) == []


def test_capacity_is_exact_integer_power():
    m, _ = load_profile("full_scale")
    assert m.capacity == 2**48
    assert isinstance(m.capacity, int)


def test_empty_file_gives_desk_defaults(tmp_path):
    path = tmp_path / "empty.toml"
    path.write_text("")
    m, t = load_config(path)
    assert (m.image_size, m.patch_size, m.num_learnable_tokens) == (32, 4, 16)
    assert (m.num_codebooks, m.entries_per_codebook, m.code_dim_total) == (2, 64, 8)
    assert (m, t) == (ModelConfig(), TrainConfig())


def test_negative_lr_fails_validation(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[train]\nbase_lr = -1\n")
    m, t = load_config(path)
    assert "base_lr must be > 0" in validate_config(m, t)
    with pytest.raises(ConfigValidationError):
        cfgmod.ensure_valid(m, t)


def test_syntax_and_unknown_keys(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[model\nx=")
    with pytest.raises(ConfigSyntaxError):
        load_config(bad)
    unknown = tmp_path / "unknown.toml"
    unknown.write_text("[model]\nnum_tokens = 3\n")
    with pytest.raises(ConfigUnknownKeyError):
        load_config(unknown)
    with pytest.raises(ConfigUnknownKeyError):
        cfgmod.loads_config("[optimizer]\nlr = 1\n")


def test_validation_examples():
    t = TrainConfig()
    assert validate_config(ModelConfig(num_codebooks=4, code_dim_total=32), t) == []
    assert "code_dim_total not divisible by C" in validate_config(ModelConfig(num_codebooks=3, code_dim_total=32), t)
    assert "image not patch-divisible" in validate_config(ModelConfig(image_size=30, patch_size=4), t)


def test_validation_lists_every_violation():
    errs = validate_config(
        ModelConfig(image_size=30, num_codebooks=3, num_learnable_tokens=0, entries_per_codebook=1),
        TrainConfig(base_lr=0, warmup_fraction=1.0, ema_enabled=True),
    )
    assert len(errs) == 7


def test_overrides_take_precedence(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[model]\nnum_codebooks = 4\ncode_dim_total = 16\n")
    m, t = load_config(path, ["model.num_codebooks=2", "train.base_lr=5e-4", "model.teacher_kind=frozen_random"])
    assert m.num_codebooks == 2 and m.code_dim_total == 16
    assert t.base_lr == 5e-4
    assert m.teacher_kind == "frozen_random"
    with pytest.raises(ConfigSyntaxError):
        load_config(path, ["nodot=1"])


def test_config_root_env(tmp_path, monkeypatch):
    (tmp_path / "exp.toml").write_text("[model]\nseed = 11\n")
    monkeypatch.setenv(cfgmod.CONFIG_ROOT_ENV, str(tmp_path))
    m, _ = load_config("exp.toml")
    assert m.seed == 11


def test_decoder_presets_and_scaling():
    assert ModelConfig(decoder_variant="B").decoder_dims() == (12, 768, 12)
    assert ModelConfig(decoder_variant="L").decoder_dims() == (24, 1024, 16)
    assert ModelConfig(decoder_variant="XL").decoder_dims() == (27, 1152, 16)
    small = [ModelConfig(decoder_variant=v, decoder_scale=1 / 16).decoder_dims() for v in ("B", "L", "XL")]
    assert all(w % h == 0 for _, w, h in small)


def test_bundled_profiles_are_valid():
    for name in ("smoke", "desk", "full_scale"):
        assert validate_config(*load_profile(name)) == []


@settings(max_examples=50, deadline=None)
@given(
    c=st.integers(1, 4),
    d=st.integers(1, 8),
    v=st.integers(2, 5000),
    m=st.integers(1, 300),
    lr=st.floats(1e-6, 1.0),
    betas=st.tuples(st.floats(0, 0.999), st.floats(0, 0.999)),
    teacher=st.sampled_from(["frozen_random", "prototype"]),
)
def test_round_trip(c, d, v, m, lr, betas, teacher):
    model = ModelConfig(num_codebooks=c, code_dim_total=c * d, entries_per_codebook=v, num_learnable_tokens=m, teacher_kind=teacher)
    train = TrainConfig(base_lr=lr, optimizer_betas=betas)
    text = cfgmod.serialize(model, train)
    assert cfgmod.loads_config(text) == (model, train)
    assert cfgmod.serialize(*cfgmod.loads_config(text)) == text
    assert model.capacity == v**c
