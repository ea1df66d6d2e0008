"""
Multi-codebook quantization
===========================

Split each token into sub-vectors, snap every sub-vector to its own codebook,
and pass gradients straight through the snap.
"""

import torch

from hybridtok.config import load_profile
from hybridtok.quantizer import MultiCodebookQuantizer, usage_stats

torch.manual_seed(0)

# two codebooks of four 2-d entries: 4**2 = 16 distinct quantized vectors
quant = MultiCodebookQuantizer(in_dim=6, num_codebooks=2, entries=4, code_dim_total=4).double()
quant.reset_parameters(seed=0)
h = torch.randn(1, 5, 6, dtype=torch.float64)
res = quant(h)
print("indices per token (one column per codebook):")
print(res.indices[0])

# the forward value is the snapped code; the backward pass is the identity
z = quant.proj_in(h).detach().requires_grad_()
out = quant.quantize(z)
out.ste_codes.sum().backward()
print("gradient reaching z is all ones:", bool((z.grad == 1).all()))

# codebook and commitment terms pull codes and encoder outputs together
print(f"codebook loss {out.codebook_loss.item():.4f}, commit loss {out.commit_loss.item():.4f}")

# usage: fraction of entries hit and the perplexity of the hit distribution
for i, (used, ppl) in enumerate(usage_stats(res.usage_counts)):
    print(f"codebook {i}: used {used:.2f}, perplexity {ppl:.2f}")

# the full-scale profile multiplies capacity: 4096**4 = 2**48 combinations
model, _ = load_profile("full_scale")
print("full-scale capacity:", model.capacity, "=", f"2**{model.capacity.bit_length() - 1}")
