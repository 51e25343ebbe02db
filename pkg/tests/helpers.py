"""Shared test fixtures: signal builders and independent oracles.

Oracles here deliberately avoid the library's own code paths (pure numpy,
explicit loops) so they stay independent of what they check.
"""

import numpy as np
import torch

from vqse.signal import Waveform


def make_tone(length=4000, freq=440.0, sr=16000, amp=0.5, seed=None):
    t = np.arange(length) / sr
    x = amp * np.sin(2 * np.pi * freq * t)
    if seed is not None:
        x = x + 0.01 * np.random.default_rng(seed).standard_normal(length)
    return Waveform(torch.tensor(x, dtype=torch.float32), sr)


def make_noise(length=4000, sr=16000, amp=0.3, seed=0):
    rng = np.random.default_rng(seed)
    return Waveform(torch.tensor(amp * rng.standard_normal(length), dtype=torch.float32), sr)


def reflect_indices_oracle(positions, length):
    """np.pad(mode='reflect') index arithmetic, written out independently."""
    if length == 1:
        return np.zeros_like(positions)
    period = 2 * length - 2
    m = np.mod(positions, period)
    return np.where(m < length, m, period - m)


def frame_oracle(x: np.ndarray, hop: int, window_length: int, frame_idx: int) -> np.ndarray:
    """Extract one centered, reflect-padded frame per the framing convention."""
    start = frame_idx * hop - window_length // 2
    positions = np.arange(start, start + window_length)
    return x[reflect_indices_oracle(positions, len(x))]


def dft_magnitude_oracle(x: np.ndarray, fft_size: int, hop: int, window_length: int,
                         window: str, frame_idx: int) -> np.ndarray:
    """Direct DFT-sum magnitude of one frame; no FFT library involved."""
    seg = frame_oracle(x.astype(np.float64), hop, window_length, frame_idx)
    if window == "hann":
        n = np.arange(window_length)
        seg = seg * (0.5 - 0.5 * np.cos(2 * np.pi * n / window_length))
    padded = np.zeros(fft_size)
    padded[:window_length] = seg
    bins = fft_size // 2 + 1
    mags = np.zeros(bins)
    for k in range(bins):
        acc = 0.0 + 0.0j
        for n in range(fft_size):
            acc += padded[n] * np.exp(-2j * np.pi * k * n / fft_size)
        mags[k] = abs(acc)
    return mags


def finite_difference_grad(fn, x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Central-difference gradient of a scalar function, element by element."""
    grad = torch.zeros_like(x, dtype=torch.float64)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = float(fn(x))
        flat[i] = orig - eps
        lo = float(fn(x))
        flat[i] = orig
        out[i] = (hi - lo) / (2 * eps)
    return grad
