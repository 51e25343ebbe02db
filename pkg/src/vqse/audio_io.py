"""Mono WAV read/write (16-bit PCM and 32-bit float) via scipy.

Resampling is out of scope: readers reject files whose rate differs from
the expected one.
"""

from __future__ import annotations

import numpy as np
import torch
from scipy.io import wavfile

from .signal import Waveform


class WavFormatError(ValueError):
    """Unsupported or mismatched WAV content."""


def read_wav(path, expected_rate: int | None = 16000) -> Waveform:
    """Load a mono WAV file as a float32 Waveform in [-1, 1].

    Args:
        path: file to read.
        expected_rate: reject the file unless it matches this rate;
            pass None to accept any rate.
    """
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise WavFormatError(f"unreadable wav file {path}: {exc}") from exc
    if data.ndim != 1:
        raise WavFormatError(f"{path}: expected mono audio, got shape {data.shape}")
    if expected_rate is not None and rate != expected_rate:
        raise WavFormatError(f"{path}: sample rate {rate} != expected {expected_rate}")
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = data
    elif data.dtype == np.float64:
        samples = data.astype(np.float32)
    else:
        raise WavFormatError(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(torch.from_numpy(samples.copy()), rate)


def write_wav(path, wav: Waveform, encoding: str = "float32"):
    """Write a Waveform to disk as float32 (default) or 16-bit PCM."""
    samples = wav.numpy()
    if encoding == "float32":
        wavfile.write(path, wav.sample_rate, samples.astype(np.float32))
    elif encoding == "pcm16":
        clipped = np.clip(samples, -1.0, 32767.0 / 32768.0)
        wavfile.write(path, wav.sample_rate, np.round(clipped * 32768.0).astype(np.int16))
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
