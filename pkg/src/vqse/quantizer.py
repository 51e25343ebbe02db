"""Gumbel-softmax product quantization with straight-through gradients.

A quantizer maps frame features to logits over G codebooks of V codewords
each, samples a codeword per book with Gumbel noise (train) or plain argmax
(eval), and concatenates the selected d-dimensional codewords. The forward
value uses the hard selection; gradients flow through the soft distribution
(Jang et al., "Categorical Reparameterization with Gumbel-Softmax").

The diversity loss is the scaled negative entropy of the selection
probabilities: minimizing it pushes codeword usage toward uniform and keeps
codebooks from collapsing.

Eval-mode quantization is a pure function of (input, parameters) and safe
to call concurrently; training noise comes from an explicit generator and
parameter updates are the caller's single-writer concern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn


@dataclass(frozen=True)
class TemperatureSchedule:
    """Multiplicative temperature decay, clamped at a floor."""

    start: float = 2.0
    floor: float = 0.5
    decay: float = 0.9995

    def __post_init__(self):
        if not (0 < self.floor <= self.start):
            raise ValueError("need 0 < floor <= start")
        if not (0 < self.decay <= 1.0):
            raise ValueError("decay must be in (0, 1]")

    def at(self, step: int) -> float:
        return max(self.floor, self.start * self.decay**step)


@dataclass(frozen=True)
class QuantizerConfig:
    """Shape and temperature settings for one product quantizer."""

    num_codebooks: int = 2
    codebook_size: int = 320
    codeword_dim: int = 128
    input_dim: int = 512
    output_dim: int = 512
    temperature: float = 2.0
    schedule: TemperatureSchedule = field(default_factory=TemperatureSchedule)
    # Average probabilities over frames before the entropy, rather than
    # averaging per-frame entropies.
    diversity_batch_averaged: bool = True

    def __post_init__(self):
        if self.num_codebooks < 1:
            raise ValueError("need at least one codebook")
        if self.codebook_size < 2:
            raise ValueError("need at least two codewords per book")
        if self.codeword_dim < 1 or self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("dimensions must be positive")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


class CodebookSet:
    """View over the learnable codewords of one quantizer, shape [G, V, d]."""

    def __init__(self, codewords: torch.Tensor):
        if codewords.ndim != 3:
            raise ValueError(f"codewords must be [G, V, d], got {tuple(codewords.shape)}")
        if not bool(torch.isfinite(codewords.detach()).all()):
            raise ValueError("codewords contain non-finite values")
        self.codewords = codewords

    @property
    def num_codebooks(self) -> int:
        return self.codewords.shape[0]

    @property
    def codebook_size(self) -> int:
        return self.codewords.shape[1]

    @property
    def codeword_dim(self) -> int:
        return self.codewords.shape[2]


@dataclass
class QuantizerOutput:
    """Everything the loss and diagnostics need from one quantizer pass."""

    quantized: torch.Tensor  # [..., time, output_dim]
    probs: torch.Tensor  # [..., time, G, V], rows on the simplex
    selections: torch.Tensor  # [..., time, G] codeword indices
    diversity_loss: torch.Tensor  # scalar in [-ln(V)/V, 0]


def diversity_loss(probs: torch.Tensor, batch_averaged: bool = True) -> torch.Tensor:
    """Scaled negative entropy (1/GV) sum p log p of selection probabilities.

    Args:
        probs: [..., G, V] with each V-row on the simplex (checked to 1e-4).
        batch_averaged: average probabilities over all leading axes before
            the entropy; otherwise average the per-frame values.

    Returns:
        Scalar tensor in [-ln(V)/V, 0].
    """
    if probs.ndim < 2:
        raise ValueError("probs must have at least [G, V] axes")
    detached = probs.detach()
    if bool((detached < 0).any()):
        raise ValueError("probabilities must be non-negative")
    row_sums = detached.sum(dim=-1)
    if bool(((row_sums - 1.0).abs() > 1e-4).any()):
        raise ValueError("probability rows must sum to 1 within 1e-4")

    num_books, size = probs.shape[-2], probs.shape[-1]
    if batch_averaged and probs.ndim > 2:
        p = probs.reshape(-1, num_books, size).mean(dim=0)
    else:
        p = probs
    plogp = torch.special.xlogy(p, p)
    if p.ndim > 2:
        per_frame = plogp.sum(dim=(-2, -1)) / (num_books * size)
        return per_frame.mean()
    return plogp.sum() / (num_books * size)


def codebook_perplexity(selections: torch.Tensor, codebook_size: int) -> torch.Tensor:
    """Exp-entropy of the empirical selection distribution, per codebook.

    Args:
        selections: integer tensor [..., G].
        codebook_size: V, the number of codewords per book.

    Returns:
        Float tensor [G] with values in [1, V]; V means uniform usage.
    """
    if selections.numel() < 1:
        raise ValueError("need at least one selection")
    flat = selections.reshape(-1, selections.shape[-1])
    perplexities = []
    for g in range(flat.shape[-1]):
        counts = torch.bincount(flat[:, g], minlength=codebook_size).double()
        p = counts / counts.sum()
        entropy = -torch.special.xlogy(p, p).sum()
        perplexities.append(torch.exp(entropy))
    return torch.stack(perplexities).to(torch.float32)


def _gumbel_noise(shape, generator, dtype, device) -> torch.Tensor:
    u = torch.rand(shape, generator=generator, dtype=dtype, device=device)
    u = u.clamp(min=1e-20)
    return -torch.log(-torch.log(u))


class GumbelProductQuantizer(nn.Module):
    """Product quantizer with Gumbel-softmax selection and straight-through grads."""

    def __init__(self, cfg: QuantizerConfig):
        super().__init__()
        self.cfg = cfg
        g, v, d = cfg.num_codebooks, cfg.codebook_size, cfg.codeword_dim
        self.logit_proj = nn.Linear(cfg.input_dim, g * v)
        bound = 1.0 / math.sqrt(d)
        self.codewords = nn.Parameter(torch.empty(g, v, d).uniform_(-bound, bound))
        if g * d != cfg.output_dim:
            self.out_proj = nn.Linear(g * d, cfg.output_dim)
        else:
            self.out_proj = None
        self.temperature = cfg.temperature

    @property
    def codebook_set(self) -> CodebookSet:
        return CodebookSet(self.codewords)

    def set_step(self, step: int):
        """Move the temperature to its scheduled value for ``step``."""
        self.temperature = self.cfg.schedule.at(step)

    def forward(
        self,
        x: torch.Tensor,
        mode: str = "eval",
        generator: torch.Generator | None = None,
        seed: int | None = None,
        hard: bool = True,
        temperature: float | None = None,
    ) -> QuantizerOutput:
        """Quantize frame features.

        Args:
            x: [time, input_dim] or [batch, time, input_dim], finite.
            mode: "train" adds seeded Gumbel noise; "eval" is deterministic.
            generator/seed: noise source, required in train mode.
            hard: straight-through (hard forward, soft backward); with False
                the forward value itself is the soft mixture, used by
                gradient diagnostics.
            temperature: override the module's current temperature.

        Returns:
            QuantizerOutput with quantized features shaped like ``x`` but with
            output_dim channels.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        tau = self.temperature if temperature is None else temperature
        if tau <= 0:
            raise ValueError(f"temperature must be positive, got {tau}")
        squeeze = x.ndim == 2
        if squeeze:
            x = x.unsqueeze(0)
        if x.ndim != 3:
            raise ValueError(f"expected [time, dim] or [batch, time, dim], got {tuple(x.shape)}")
        if not bool(torch.isfinite(x.detach()).all()):
            raise ValueError("quantizer input contains non-finite values")

        cfg = self.cfg
        g, v = cfg.num_codebooks, cfg.codebook_size
        logits = self.logit_proj(x).reshape(x.shape[0], x.shape[1], g, v)
        if not bool(torch.isfinite(logits.detach()).all()):
            raise ValueError("quantizer logits are non-finite")

        if mode == "train":
            if generator is None:
                if seed is None:
                    raise ValueError("train mode requires a seeded noise source")
                generator = torch.Generator(device=x.device)
                generator.manual_seed(seed)
            perturbed = logits + _gumbel_noise(logits.shape, generator, logits.dtype, x.device)
        else:
            perturbed = logits

        probs = torch.softmax(perturbed / tau, dim=-1)
        selections = perturbed.argmax(dim=-1)  # ties resolve to the lowest index

        if hard:
            one_hot = torch.zeros_like(probs).scatter_(-1, selections.unsqueeze(-1), 1.0)
            # (probs - probs.detach()) is exactly zero in value, so the hard
            # forward equals a plain codeword lookup while gradients flow
            # through the soft probabilities.
            assignment = one_hot + (probs - probs.detach())
        else:
            assignment = probs
        picked = torch.einsum("btgv,gvd->btgd", assignment, self.codewords.to(probs.dtype))
        quantized = picked.reshape(x.shape[0], x.shape[1], -1)
        if self.out_proj is not None:
            quantized = self.out_proj(quantized)

        div = diversity_loss(probs, batch_averaged=cfg.diversity_batch_averaged)
        if squeeze:
            quantized, probs, selections = quantized[0], probs[0], selections[0]
        return QuantizerOutput(quantized, probs, selections, div)
