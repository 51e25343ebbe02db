"""Waveform U-Net enhancer with multi-granularity vector quantization.

Encoder: depth-D stack of strided 1-D convolutions (ReLU). Bottleneck:
N-layer transformer encoder over the coarsest frames, optionally after
cross-attention fusion with contextual features from an external provider.
Decoder: depth-D transposed convolutions with additive skip connections.

Quantizers sit at D+1 sites: VQ 0 discretizes the bottleneck output and
replaces it; for each decoder stage, a fusion block concatenates the
matching-resolution encoder activation with the decoder stream, fuses them
through two convolutions, quantizes, and merges the discrete features back.
Every site can be switched off independently for ablations.

Length bookkeeping: inputs are padded to a multiple of stride**depth, every
encoder layer divides the length exactly by the stride, and the output is
trimmed back, so enhancement always preserves the input length.

Eval-mode forwards are read-only on parameters and safe to run from several
threads; training keeps a single writer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import torch
import torch.nn.functional as F
from torch import nn

from .features import FeatureBundle
from .quantizer import GumbelProductQuantizer, QuantizerConfig, QuantizerOutput
from .signal import Waveform

# Codebook sizes for the desk-scale default, coarse site 0 to finest site D.
_DESK_VQ_SIZES = (32, 64, 96, 256, 512, 1024)
_FULL_VQ_SIZES = (320, 320, 640, 960, 2560, 5120)


class FeatureRateError(ValueError):
    """Contextual features cover a different duration than the audio."""


@dataclass(frozen=True)
class EnhancerConfig:
    """Architecture hyperparameters for the enhancer."""

    depth: int = 4
    hidden_dim: int = 64
    kernel: int = 8
    stride: int = 2
    bottleneck_layers: int = 2
    attention_heads: int = 4
    ffn_dim: int = 256
    feature_dim: int = 64
    fusion_enabled: bool = True
    dropout: float = 0.0
    vq_configs: tuple[QuantizerConfig, ...] = ()
    vq_enabled: tuple[bool, ...] = ()

    def __post_init__(self):
        if self.depth < 1 or self.bottleneck_layers < 1:
            raise ValueError("depth and bottleneck_layers must be >= 1")
        if self.stride < 1 or self.kernel < self.stride:
            raise ValueError("need stride >= 1 and kernel >= stride")
        if self.hidden_dim % self.attention_heads != 0:
            raise ValueError("hidden_dim must be divisible by attention_heads")
        if not self.vq_configs:
            object.__setattr__(self, "vq_configs", default_vq_configs(self.depth, self.hidden_dim))
        if not self.vq_enabled:
            object.__setattr__(self, "vq_enabled", (True,) * (self.depth + 1))
        if len(self.vq_configs) != self.depth + 1 or len(self.vq_enabled) != self.depth + 1:
            raise ValueError("vq_configs and vq_enabled must both have depth + 1 entries")
        for i, vq_cfg in enumerate(self.vq_configs):
            if vq_cfg.input_dim != self.hidden_dim or vq_cfg.output_dim != self.hidden_dim:
                raise ValueError(f"vq {i} must map hidden_dim -> hidden_dim features")

    @property
    def total_stride(self) -> int:
        return self.stride**self.depth

    def with_mask(self, vq_enabled) -> "EnhancerConfig":
        """Same architecture with a different set of active quantizers."""
        return replace(self, vq_enabled=tuple(bool(b) for b in vq_enabled))


def default_vq_configs(depth: int, hidden_dim: int, codeword_dim: int = 32,
                       sizes=None) -> tuple[QuantizerConfig, ...]:
    """Monotone-granularity quantizer stack: site 0 uses a 2-book product code,
    deeper sites use single books of growing size."""
    if sizes is None:
        sizes = _DESK_VQ_SIZES
    if len(sizes) < depth + 1:
        raise ValueError(f"need {depth + 1} codebook sizes, got {len(sizes)}")
    configs = []
    for i in range(depth + 1):
        configs.append(
            QuantizerConfig(
                num_codebooks=2 if i == 0 else 1,
                codebook_size=sizes[i],
                codeword_dim=codeword_dim,
                input_dim=hidden_dim,
                output_dim=hidden_dim,
            )
        )
    return tuple(configs)


def desk_config() -> EnhancerConfig:
    """Small CPU-friendly configuration used by tests and demos."""
    return EnhancerConfig()


def full_scale_config() -> EnhancerConfig:
    """Full-scale configuration: depth 5, width 512, product VQ 2x320 plus
    single books of 320..5120 128-dim codewords. Attention uses 8 heads
    because 512 channels do not split into 12 even head dims."""
    return EnhancerConfig(
        depth=5,
        hidden_dim=512,
        kernel=8,
        stride=2,
        bottleneck_layers=2,
        attention_heads=8,
        ffn_dim=2048,
        feature_dim=768,
        vq_configs=default_vq_configs(5, 512, codeword_dim=128, sizes=_FULL_VQ_SIZES),
    )


@dataclass
class LayerActivations:
    """Per-layer feature maps from one forward pass (diagnostics)."""

    encoder_outputs: list[torch.Tensor] = field(default_factory=list)
    bottleneck_output: torch.Tensor | None = None
    decoder_outputs: list[torch.Tensor] = field(default_factory=list)


def pad_input(x: Waveform, cfg: EnhancerConfig) -> tuple[Waveform, int]:
    """Zero-pad to the smallest length divisible by stride**depth.

    Returns the padded waveform and the original length so callers can trim.
    """
    length = len(x)
    block = cfg.total_stride
    target = math.ceil(length / block) * block
    if target == length:
        return x, length
    padded = F.pad(x.samples, (0, target - length))
    return Waveform(padded, x.sample_rate), length


def _sinusoidal_positions(length: int, dim: int, dtype, device) -> torch.Tensor:
    position = torch.arange(length, dtype=dtype, device=device).unsqueeze(1)
    step = torch.arange(0, dim, 2, dtype=dtype, device=device)
    inv_freq = torch.exp(step * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=dtype, device=device)
    table[:, 0::2] = torch.sin(position * inv_freq)
    table[:, 1::2] = torch.cos(position * inv_freq[: dim // 2])
    return table


def nearest_frame_resample(features: torch.Tensor, target_len: int) -> torch.Tensor:
    """Resample [B, F, C] to [B, target_len, C] by nearest-frame lookup."""
    src_len = features.shape[1]
    grid = (torch.arange(target_len, dtype=torch.float64) + 0.5) * src_len / target_len
    idx = grid.floor().long().clamp_(0, src_len - 1)
    return features[:, idx]


class CrossAttentionFusion(nn.Module):
    """Residual cross-attention: queries from local features, keys/values
    from contextual features."""

    def __init__(self, local_dim: int, context_dim: int, num_heads: int):
        super().__init__()
        self.attention = nn.MultiheadAttention(
            local_dim, num_heads, kdim=context_dim, vdim=context_dim, batch_first=True
        )

    def forward(self, local: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        attended, _ = self.attention(local, context, context, need_weights=False)
        return local + attended


class FusionVQBlock(nn.Module):
    """Bridge between one encoder layer and the matching decoder stage.

    concat(enc, dec) -> two 1-D convs -> quantizer -> concat(discrete, dec)
    -> 1-D conv, preserving the decoder activation's shape.
    """

    def __init__(self, channels: int, vq_cfg: QuantizerConfig):
        super().__init__()
        self.fuse = nn.Sequential(
            nn.Conv1d(2 * channels, channels, kernel_size=3, padding=1),
            nn.ReLU(),
            nn.Conv1d(channels, channels, kernel_size=3, padding=1),
        )
        self.quantizer = GumbelProductQuantizer(vq_cfg)
        self.merge = nn.Conv1d(2 * channels, channels, kernel_size=3, padding=1)

    def forward(self, enc: torch.Tensor, dec: torch.Tensor, mode: str = "eval",
                generator=None, detach_vq: bool = False):
        if enc.shape[-1] != dec.shape[-1]:
            raise ValueError(
                f"encoder/decoder temporal lengths differ: {enc.shape[-1]} vs {dec.shape[-1]}"
            )
        fused = self.fuse(torch.cat([enc, dec], dim=1))
        qout = self.quantizer(fused.transpose(1, 2), mode=mode, generator=generator)
        discrete = qout.quantized.transpose(1, 2)
        if detach_vq:
            discrete = discrete.detach()
        merged = self.merge(torch.cat([discrete, dec], dim=1))
        return merged, qout


class Enhancer(nn.Module):
    """The full denoiser: encoder, fused bottleneck, quantizers, decoder."""

    def __init__(self, cfg: EnhancerConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.hidden_dim
        self.encoder = nn.ModuleList(
            nn.Conv1d(1 if i == 0 else ch, ch, cfg.kernel, cfg.stride) for i in range(cfg.depth)
        )
        self.decoder = nn.ModuleList(
            nn.ConvTranspose1d(ch, 1 if i == cfg.depth - 1 else ch, cfg.kernel, cfg.stride)
            for i in range(cfg.depth)
        )
        layer = nn.TransformerEncoderLayer(
            d_model=ch,
            nhead=cfg.attention_heads,
            dim_feedforward=cfg.ffn_dim,
            dropout=cfg.dropout,
            batch_first=True,
        )
        self.bottleneck = nn.TransformerEncoder(layer, cfg.bottleneck_layers)
        self.fusion = (
            CrossAttentionFusion(ch, cfg.feature_dim, cfg.attention_heads)
            if cfg.fusion_enabled
            else None
        )
        # Only enabled sites get parameters, so ablated models are true
        # sub-networks with no dead parameter groups.
        self.quantizers = nn.ModuleDict()
        if cfg.vq_enabled[0]:
            self.quantizers["0"] = GumbelProductQuantizer(cfg.vq_configs[0])
        self.vq_blocks = nn.ModuleDict()
        for i in range(1, cfg.depth + 1):
            if cfg.vq_enabled[i]:
                self.vq_blocks[str(i)] = FusionVQBlock(ch, cfg.vq_configs[i])

    def set_step(self, step: int):
        """Advance every quantizer's temperature schedule to ``step``."""
        for q in self.quantizers.values():
            q.set_step(step)
        for block in self.vq_blocks.values():
            block.quantizer.set_step(step)

    def temperatures(self) -> dict[int, float]:
        temps = {}
        if "0" in self.quantizers:
            temps[0] = self.quantizers["0"].temperature
        for key, block in self.vq_blocks.items():
            temps[int(key)] = block.quantizer.temperature
        return temps

    def _pad_conv(self, h: torch.Tensor) -> torch.Tensor:
        total = self.cfg.kernel - self.cfg.stride
        return F.pad(h, (total // 2, total - total // 2))

    def encode(self, x) -> LayerActivations:
        """Run the encoder only; input length must divide by stride**depth."""
        h = self._as_input_tensor(x)
        acts = LayerActivations()
        for conv in self.encoder:
            h = F.relu(conv(self._pad_conv(h)))
            acts.encoder_outputs.append(h)
        return acts

    def _as_input_tensor(self, x) -> torch.Tensor:
        if isinstance(x, Waveform):
            x = x.samples.reshape(1, 1, -1)
        if x.ndim != 3 or x.shape[1] != 1:
            raise ValueError(f"expected [batch, 1, time], got {tuple(x.shape)}")
        length = x.shape[-1]
        if length < self.cfg.total_stride or length % self.cfg.total_stride != 0:
            raise ValueError(
                f"input length {length} must be a positive multiple of {self.cfg.total_stride};"
                " see pad_input"
            )
        return x.to(next(self.parameters()).dtype)

    def fuse_features(self, local: torch.Tensor, contextual, local_rate: float | None = None
                      ) -> torch.Tensor:
        """Cross-attend local frames [B, T, C] onto contextual features.

        ``contextual`` is a FeatureBundle or a [B, F, feature_dim] tensor.
        When both rates are known, the covered durations must agree within
        25% (or 2 frames), otherwise the alignment is considered broken.
        """
        if self.fusion is None:
            raise RuntimeError("fusion is disabled in this configuration")
        if isinstance(contextual, FeatureBundle):
            context = contextual.features.unsqueeze(0).to(local.dtype)
            if local_rate is not None:
                expected = local.shape[1] / local_rate * contextual.frame_rate
                if abs(context.shape[1] - expected) > max(2.0, 0.25 * expected):
                    raise FeatureRateError(
                        f"contextual features cover {context.shape[1]} frames, expected "
                        f"about {expected:.1f} at {contextual.frame_rate} Hz"
                    )
        else:
            context = contextual.to(local.dtype)
        if context.shape[-1] != self.cfg.feature_dim:
            raise ValueError(
                f"contextual feature dim {context.shape[-1]} != configured {self.cfg.feature_dim}"
            )
        if context.shape[0] == 1 and local.shape[0] > 1:
            context = context.expand(local.shape[0], -1, -1)
        aligned = nearest_frame_resample(context, local.shape[1])
        return self.fusion(local, aligned)

    def forward(
        self,
        x: torch.Tensor,
        contextual: torch.Tensor | None = None,
        mode: str = "eval",
        generator: torch.Generator | None = None,
        detach_vq: bool = False,
        return_activations: bool = False,
    ):
        """Denoise a batch.

        Args:
            x: [batch, 1, time] with time divisible by stride**depth.
            contextual: [batch, frames, feature_dim] features, required when
                fusion is enabled.
            mode: "train" (Gumbel noise, needs generator) or "eval".
            generator: noise source for the quantizers in train mode.
            detach_vq: cut gradients at every quantizer output (diagnostics).
            return_activations: also return LayerActivations.

        Returns:
            (yhat [batch, 1, time], vq_outputs dict site->QuantizerOutput)
            plus activations when requested.
        """
        h = self._as_input_tensor(x)
        acts = LayerActivations()
        for conv in self.encoder:
            h = F.relu(conv(self._pad_conv(h)))
            acts.encoder_outputs.append(h)

        frames = h.transpose(1, 2)  # [B, T', C]
        if self.fusion is not None:
            if contextual is None:
                raise ValueError("fusion is enabled but no contextual features were given")
            frames = self.fuse_features(frames, contextual)
        frames = frames + _sinusoidal_positions(
            frames.shape[1], frames.shape[2], frames.dtype, frames.device
        )
        z = self.bottleneck(frames)
        acts.bottleneck_output = z.transpose(1, 2)

        vq_outputs: dict[int, QuantizerOutput] = {}
        if "0" in self.quantizers:
            qout = self.quantizers["0"](z, mode=mode, generator=generator)
            vq_outputs[0] = qout
            z = qout.quantized.detach() if detach_vq else qout.quantized

        h = z.transpose(1, 2)
        depth = self.cfg.depth
        total = self.cfg.kernel - self.cfg.stride
        for j, deconv in enumerate(self.decoder):
            site = depth - j
            enc = acts.encoder_outputs[site - 1]
            h = h + enc  # additive skip connection
            key = str(site)
            if key in self.vq_blocks:
                h, qout = self.vq_blocks[key](
                    enc, h, mode=mode, generator=generator, detach_vq=detach_vq
                )
                vq_outputs[site] = qout
            h = deconv(h)
            h = h[..., total // 2 : h.shape[-1] - (total - total // 2)]
            if j < depth - 1:
                h = F.relu(h)
            acts.decoder_outputs.append(h)

        if return_activations:
            return h, vq_outputs, acts
        return h, vq_outputs

    def enhance(
        self,
        x: Waveform,
        contextual: FeatureBundle | None = None,
        mode: str = "eval",
        generator: torch.Generator | None = None,
    ) -> tuple[Waveform, dict[int, QuantizerOutput]]:
        """Denoise one waveform, preserving its length exactly."""
        padded, original_length = pad_input(x, self.cfg)
        context = None
        if self.fusion is not None:
            if contextual is None:
                raise ValueError("fusion is enabled but no contextual features were given")
            rate = x.sample_rate / self.cfg.total_stride
            local_frames = len(padded) // self.cfg.total_stride
            expected = local_frames / rate * contextual.frame_rate
            if abs(contextual.features.shape[0] - expected) > max(2.0, 0.25 * expected):
                raise FeatureRateError(
                    f"contextual features cover {contextual.features.shape[0]} frames, "
                    f"expected about {expected:.1f} at {contextual.frame_rate} Hz"
                )
            context = contextual.features.unsqueeze(0)
        inp = padded.samples.reshape(1, 1, -1)
        if mode == "eval":
            with torch.no_grad():
                yhat, vq_outputs = self.forward(inp, context, mode=mode, generator=generator)
        else:
            yhat, vq_outputs = self.forward(inp, context, mode=mode, generator=generator)
        out = yhat[0, 0, :original_length]
        return Waveform(out, x.sample_rate), vq_outputs
