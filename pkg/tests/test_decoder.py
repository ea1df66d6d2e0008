import pytest
import torch

from hybridtok.config import ModelConfig
from hybridtok.decoder import Decoder, count_params
from hybridtok.errors import ShapeError
from hybridtok.layers import init_module, patchify_pixels, unpatchify
from hybridtok.model import HybridTokenizer


def small_decoder(**kw):
    args = dict(code_dim_total=4, depth=1, width=16, heads=2, grid_size=2, patch_size=4, channels=3)
    args.update(kw)
    dec = Decoder(**args).double()
    init_module(dec, 0)
    dec.reset_parameters(0)
    return dec


def test_output_shape_and_range():
    dec = small_decoder()
    out = dec(torch.randn(3, 4, 4, dtype=torch.float64) * 100)
    assert out.shape == (3, 8, 8, 3)
    assert out.min() >= -1 and out.max() <= 1


def test_clamp_saturates_large_outputs():
    dec = small_decoder()
    with torch.no_grad():
        dec.head.bias.fill_(50.0)
    assert torch.equal(dec(torch.randn(1, 4, 4, dtype=torch.float64)), torch.ones(1, 8, 8, 3, dtype=torch.float64))


def test_token_count_checks():
    dec = small_decoder()
    with pytest.raises(ShapeError):
        dec(torch.zeros(1, 5, 4, dtype=torch.float64))
    with pytest.raises(ShapeError):
        dec(torch.zeros(1, 9, 4, dtype=torch.float64))


def test_latent_mode_reads_any_configured_length():
    dec = small_decoder(num_latent_tokens=3)
    assert dec(torch.randn(2, 3, 4, dtype=torch.float64)).shape == (2, 8, 8, 3)
    with pytest.raises(ShapeError):
        dec(torch.randn(2, 4, 4, dtype=torch.float64))


def test_unpatchify_inverts_patchify():
    x = torch.randn(2, 12, 12, 3)
    assert torch.equal(unpatchify(patchify_pixels(x, 3), 3, 3), x)
    with pytest.raises(ShapeError):
        unpatchify(torch.zeros(1, 5, 48), 4, 3)


def test_preset_sizes_order():
    full = [count_params(Decoder(8, *ModelConfig(decoder_variant=v).decoder_dims()[:3], grid_size=2, patch_size=2)) for v in ("B",)]
    assert full[0] > 80_000_000  # ViT-B scale transformer
    desk = [
        count_params(HybridTokenizer(ModelConfig(decoder_variant=v, decoder_scale=1 / 16)).decoder)
        for v in ("B", "L", "XL")
    ]
    assert desk[0] < desk[1] < desk[2]
