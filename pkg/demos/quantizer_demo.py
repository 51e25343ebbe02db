"""Gumbel product quantization, step by step.

Shows how features turn into codeword selections, how temperature controls
the softness of the distribution, what the straight-through trick does to
gradients, and how diversity loss and perplexity describe codebook usage.

Run:  python demos/quantizer_demo.py
"""

import math

import torch

from vqse import (
    GumbelProductQuantizer,
    QuantizerConfig,
    TemperatureSchedule,
    codebook_perplexity,
    diversity_loss,
)

torch.manual_seed(0)

print("=" * 60)
print("1. A small product quantizer: G=2 books x V=8 codewords")
print("=" * 60)
cfg = QuantizerConfig(num_codebooks=2, codebook_size=8, codeword_dim=4,
                      input_dim=6, output_dim=6)
quantizer = GumbelProductQuantizer(cfg)
x = torch.randn(4, 6)
out = quantizer(x, mode="eval")
print(f"input  {tuple(x.shape)} -> quantized {tuple(out.quantized.shape)}")
print(f"selections per frame (book0, book1):\n{out.selections.tolist()}")

print()
print("=" * 60)
print("2. Temperature controls how soft the selection distribution is")
print("=" * 60)
for tau in (2.0, 1.0, 0.25):
    probs = quantizer(x, mode="eval", temperature=tau).probs
    print(f"tau={tau:4.2f}: max prob {float(probs.max()):.3f}, "
          f"entropy {float(-(probs * probs.clamp_min(1e-12).log()).sum(-1).mean()):.3f} nats")

print()
print("=" * 60)
print("3. Train mode adds seeded Gumbel noise; eval is deterministic")
print("=" * 60)
a = quantizer(x, mode="train", seed=1).selections
b = quantizer(x, mode="train", seed=1).selections
c = quantizer(x, mode="train", seed=2).selections
print(f"same seed reproduces selections: {torch.equal(a, b)}")
print(f"different seed changes them:     {not torch.equal(a, c)}")

print()
print("=" * 60)
print("4. Straight-through: hard forward value, soft backward path")
print("=" * 60)
out = quantizer(x, mode="train", seed=3)
lookup = torch.cat([quantizer.codewords[g][out.selections[:, g]] for g in range(2)], dim=-1)
print(f"forward equals plain codeword lookup: "
      f"{torch.equal(out.quantized, lookup)}")
probe = (out.quantized * torch.randn_like(out.quantized)).sum()
probe.backward()
print(f"logit projection still gets gradient: "
      f"{float(quantizer.logit_proj.weight.grad.norm()):.4f}")

print()
print("=" * 60)
print("5. Diversity loss: scaled negative entropy of codeword usage")
print("=" * 60)
v = cfg.codebook_size
uniform = torch.full((10, 2, v), 1.0 / v)
one_hot = torch.zeros(10, 2, v)
one_hot[:, :, 0] = 1.0
print(f"uniform usage  : {float(diversity_loss(uniform)):.5f}  "
      f"(lower bound -ln(V)/V = {-math.log(v)/v:.5f})")
print(f"collapsed usage: {float(diversity_loss(one_hot)):.5f}  (upper bound 0)")

print()
print("=" * 60)
print("6. Perplexity: the effective number of codewords in use")
print("=" * 60)
balanced = torch.randint(0, v, (5000, 2))
collapsed = torch.zeros(5000, 2, dtype=torch.long)
print(f"uniform selections  -> {codebook_perplexity(balanced, v).tolist()}")
print(f"collapsed selections -> {codebook_perplexity(collapsed, v).tolist()}")

print()
print("=" * 60)
print("7. Temperature schedule (multiplicative decay to a floor)")
print("=" * 60)
schedule = TemperatureSchedule(start=2.0, floor=0.5, decay=0.9995)
for step in (0, 500, 2000, 5000):
    print(f"step {step:5d}: tau = {schedule.at(step):.3f}")
