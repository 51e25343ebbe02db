"""Contextual feature providers for the fusion path.

Real deployments extract features with a frozen pretrained speech encoder.
This module keeps that dependency out of the core: a deterministic log-mel
stub provides drop-in features for tests and desk runs, and a small binary
file format carries features precomputed by any external model.

Precomputed file layout (all little-endian):

    bytes 0..7    magic ``b"VQSEFEAT"``
    u32           format version (currently 1)
    u32           feature dimension
    u64           number of frames (>= 1)
    f64           frame rate in frames/second
    u16           provider id length, followed by that many UTF-8 bytes
    then          frames * dim float32 values, row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import torch

from .signal import StftConfig, Waveform, stft_magnitude

MAGIC = b"VQSEFEAT"
FORMAT_VERSION = 1
_LOG_FLOOR = 1e-5


class FeatureFileError(ValueError):
    """Malformed or mismatched precomputed-feature file."""


@dataclass
class FeatureBundle:
    """Frame-level contextual features with their rate and origin."""

    features: torch.Tensor  # [frames, dim]
    frame_rate: float
    provider_id: str

    def __post_init__(self):
        if not isinstance(self.features, torch.Tensor):
            self.features = torch.as_tensor(np.asarray(self.features), dtype=torch.float32)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(f"features must be [frames >= 1, dim], got {tuple(self.features.shape)}")
        if not bool(torch.isfinite(self.features).all()):
            raise ValueError("features contain non-finite values")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(num_bands: int, fft_size: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters, shape [num_bands, fft_size // 2 + 1]."""
    n_bins = fft_size // 2 + 1
    mel_edges = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), num_bands + 2)
    bin_centers = mel_to_hz(mel_edges) * fft_size / sample_rate
    bins = np.arange(n_bins, dtype=np.float64)
    lo, center, hi = bin_centers[:-2, None], bin_centers[1:-1, None], bin_centers[2:, None]
    rising = (bins - lo) / np.maximum(center - lo, 1e-9)
    falling = (hi - bins) / np.maximum(hi - center, 1e-9)
    return np.maximum(0.0, np.minimum(rising, falling))


def stub_features(x: Waveform, dim: int = 64, seed: int = 0) -> FeatureBundle:
    """Deterministic stand-in for a pretrained feature extractor.

    Log-mel filterbank (64 bands, 25 ms window, 20 ms hop) pushed through a
    fixed random affine map to ``dim`` channels. Identical (x, dim, seed)
    always produce bit-identical bundles.
    """
    sr = x.sample_rate
    win = max(2, round(0.025 * sr))
    hop = max(1, round(0.020 * sr))
    fft_size = 1 << (win - 1).bit_length()
    cfg = StftConfig(fft_size=fft_size, hop=hop, window_length=win, window="hann")
    with torch.no_grad():
        mag = stft_magnitude(x.samples.detach(), cfg).double().numpy()
    filters = mel_filterbank(64, fft_size, sr)
    logmel = np.log(np.maximum(mag @ filters.T, _LOG_FLOOR))

    rng = np.random.default_rng(seed)
    weight = rng.standard_normal((64, dim)) / np.sqrt(64.0)
    bias = 0.1 * rng.standard_normal(dim)
    mapped = (logmel @ weight + bias).astype(np.float32)
    return FeatureBundle(
        features=torch.from_numpy(mapped),
        frame_rate=sr / hop,
        provider_id=f"stub-logmel64-seed{seed}",
    )


def save_precomputed(path, bundle: FeatureBundle):
    """Write a FeatureBundle in the documented binary layout."""
    frames = bundle.features.detach().cpu().numpy().astype("<f4")
    provider = bundle.provider_id.encode("utf-8")
    header = MAGIC + struct.pack(
        "<IIQdH",
        FORMAT_VERSION,
        frames.shape[1],
        frames.shape[0],
        float(bundle.frame_rate),
        len(provider),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(provider)
        fh.write(frames.tobytes())


def load_precomputed(path, expected_dim: int) -> FeatureBundle:
    """Load a precomputed-feature file, validating shape and finiteness."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + struct.calcsize("<IIQdH"):
        raise FeatureFileError(f"{path}: truncated header")
    if blob[: len(MAGIC)] != MAGIC:
        raise FeatureFileError(f"{path}: bad magic, not a feature file")
    offset = len(MAGIC)
    version, dim, num_frames, frame_rate, provider_len = struct.unpack_from("<IIQdH", blob, offset)
    offset += struct.calcsize("<IIQdH")
    if version != FORMAT_VERSION:
        raise FeatureFileError(f"{path}: unsupported format version {version}")
    if dim != expected_dim:
        raise FeatureFileError(f"{path}: feature dim {dim} != expected {expected_dim}")
    if num_frames < 1:
        raise FeatureFileError(f"{path}: empty frame axis")
    provider = blob[offset : offset + provider_len].decode("utf-8")
    offset += provider_len
    expected_bytes = num_frames * dim * 4
    payload = blob[offset : offset + expected_bytes]
    if len(payload) != expected_bytes:
        raise FeatureFileError(f"{path}: payload truncated")
    frames = np.frombuffer(payload, dtype="<f4").reshape(num_frames, dim)
    if not np.isfinite(frames).all():
        raise FeatureFileError(f"{path}: non-finite feature values")
    if frame_rate <= 0:
        raise FeatureFileError(f"{path}: non-positive frame rate")
    return FeatureBundle(torch.from_numpy(frames.copy()), frame_rate, provider)
