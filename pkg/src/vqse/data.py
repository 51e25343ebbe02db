"""Clean/noisy pair generation, augmentation, and corpus loading.

The synthetic generator mixes harmonic AM-modulated tone complexes with
filtered or babble-like noise at exactly the requested SNR, measured over
the active region of the clean signal. It keeps the whole pipeline hermetic;
real corpora come in through ``load_wav_corpus``.

Every sample is a pure function of (spec, index), so prefetching pipelines
can generate concurrently without coordination.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
from scipy import signal as sp_signal

from .audio_io import read_wav, write_wav
from .features import mel_to_hz, hz_to_mel
from .signal import Waveform

# Samples louder than this (relative to full scale 1.0) count as active
# when measuring SNR: -40 dBFS.
ACTIVITY_THRESHOLD = 10.0 ** (-40.0 / 20.0)


class CorpusError(ValueError):
    """Unpaired, mismatched, or unreadable corpus files."""


@dataclass
class PairSample:
    clean: Waveform
    noisy: Waveform
    snr_db: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.clean) != len(self.noisy):
            raise ValueError("clean and noisy lengths differ")
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")


@dataclass(frozen=True)
class CorpusSpec:
    """Recipe for a deterministic synthetic corpus."""

    num_pairs: int = 32
    duration_range: tuple[float, float] = (0.5, 1.0)
    snr_set: tuple[float, ...] = (0.0, 5.0, 10.0, 15.0)
    seed: int = 0
    sample_rate: int = 16000

    def __post_init__(self):
        if self.num_pairs < 1:
            raise ValueError("num_pairs must be >= 1")
        lo, hi = self.duration_range
        if not (0 < lo <= hi):
            raise ValueError("durations must be positive and ordered")
        if not self.snr_set:
            raise ValueError("snr_set must be non-empty")


def _active_mask(clean: np.ndarray) -> np.ndarray:
    mask = np.abs(clean) >= ACTIVITY_THRESHOLD
    return mask if mask.any() else np.ones_like(mask)


def measure_snr_db(clean: Waveform, noisy: Waveform) -> float:
    """SNR of ``noisy`` against ``clean`` over the active clean region."""
    c = clean.numpy().astype(np.float64)
    n = noisy.numpy().astype(np.float64) - c
    mask = _active_mask(c)
    p_clean = np.mean(c[mask] ** 2)
    p_noise = np.mean(n[mask] ** 2)
    if p_noise == 0:
        return math.inf
    return 10.0 * math.log10(p_clean / p_noise)


def _tone_complex(rng: np.random.Generator, num_samples: int, sr: int,
                  amplitude: float = 1.0) -> np.ndarray:
    """Sum of 2-5 harmonically related AM tones with random onsets."""
    t = np.arange(num_samples) / sr
    f0 = rng.uniform(80.0, 300.0)
    num_harmonics = int(rng.integers(2, 6))
    out = np.zeros(num_samples)
    am_rate = rng.uniform(2.0, 8.0)
    am_depth = rng.uniform(0.3, 0.8)
    am = 1.0 + am_depth * np.sin(2 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi))
    for k in range(1, num_harmonics + 1):
        amp = rng.uniform(0.4, 1.0) / k
        phase = rng.uniform(0, 2 * np.pi)
        tone = amp * np.sin(2 * np.pi * f0 * k * t + phase)
        onset = int(rng.uniform(0, 0.25) * num_samples)
        ramp_len = min(max(1, int(0.02 * sr)), num_samples - onset)
        envelope = np.zeros(num_samples)
        envelope[onset + ramp_len :] = 1.0
        envelope[onset : onset + ramp_len] = 0.5 - 0.5 * np.cos(
            np.pi * np.arange(ramp_len) / ramp_len
        )
        out += tone * envelope
    out *= am
    # Short edge fades prevent clicks when pairs are concatenated or cropped.
    fade = min(max(1, int(0.01 * sr)), num_samples // 2)
    if fade > 0:
        window = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        out[:fade] *= window
        out[-fade:] *= window[::-1]
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= amplitude / peak
    return out


def _noise_signal(rng: np.random.Generator, num_samples: int, sr: int) -> tuple[np.ndarray, str]:
    kind = rng.choice(["filtered", "babble"])
    if kind == "filtered":
        white = rng.standard_normal(num_samples)
        low = rng.uniform(100.0, 1000.0)
        high = rng.uniform(1500.0, min(6000.0, sr / 2 - 100.0))
        sos = sp_signal.butter(4, [low, high], btype="bandpass", fs=sr, output="sos")
        noise = sp_signal.sosfiltfilt(sos, white)
    else:
        noise = sum(_tone_complex(rng, num_samples, sr, amplitude=0.3) for _ in range(6))
        noise = noise + 0.05 * rng.standard_normal(num_samples)
    peak = np.max(np.abs(noise))
    return (noise / peak if peak > 0 else noise), str(kind)


def synth_pair(spec: CorpusSpec, index: int) -> PairSample:
    """Deterministically synthesize pair ``index`` of the corpus.

    The noise is scaled so the measured SNR over the active clean region
    equals the sampled SNR exactly.
    """
    if not 0 <= index < spec.num_pairs:
        raise IndexError(f"index {index} outside corpus of {spec.num_pairs}")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index]))
    sr = spec.sample_rate
    duration = rng.uniform(*spec.duration_range)
    num_samples = max(1, round(duration * sr))

    clean = _tone_complex(rng, num_samples, sr, amplitude=0.5)
    noise, noise_kind = _noise_signal(rng, num_samples, sr)
    snr_db = float(spec.snr_set[rng.integers(len(spec.snr_set))])

    # The activity threshold is absolute (-40 dBFS), so any headroom rescale
    # changes the active region; recompute the mask and gain until the mix
    # fits. SNR exactness over the final mask holds at every exit.
    for _ in range(4):
        mask = _active_mask(clean)
        p_clean = np.mean(clean[mask] ** 2)
        p_noise = np.mean(noise[mask] ** 2)
        gain = math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
        noisy = clean + gain * noise
        peak = np.max(np.abs(noisy))
        if peak <= 0.99:
            break
        clean = clean * (0.99 / peak)
        noise = noise * (0.99 / peak)

    return PairSample(
        clean=Waveform(torch.from_numpy(clean.astype(np.float32)), sr),
        noisy=Waveform(torch.from_numpy(noisy.astype(np.float32)), sr),
        snr_db=snr_db,
        metadata={"index": index, "noise_kind": noise_kind, "duration": num_samples / sr},
    )


class SyntheticCorpus:
    """Indexable view over a CorpusSpec; samples are generated on demand."""

    def __init__(self, spec: CorpusSpec):
        self.spec = spec

    def __len__(self) -> int:
        return self.spec.num_pairs

    def __getitem__(self, index: int) -> PairSample:
        return synth_pair(self.spec, index)

    def __iter__(self) -> Iterator[PairSample]:
        return (self[i] for i in range(len(self)))


def remix_augment(batch: Sequence[PairSample], seed: int) -> list[PairSample]:
    """Permute noise components across the batch, keeping clean targets.

    All pairs must share one length (crop segments before remixing).
    """
    if len(batch) < 2:
        warnings.warn("remix_augment needs at least 2 samples; returning batch unchanged")
        return list(batch)
    lengths = {len(s.clean) for s in batch}
    if len(lengths) != 1:
        raise ValueError(f"remix requires equal-length samples, got lengths {sorted(lengths)}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(batch))
    noises = [s.noisy.samples - s.clean.samples for s in batch]
    remixed = []
    for i, sample in enumerate(batch):
        noisy = Waveform(sample.clean.samples + noises[perm[i]], sample.clean.sample_rate)
        remixed.append(
            PairSample(
                clean=sample.clean,
                noisy=noisy,
                snr_db=measure_snr_db(sample.clean, noisy),
                metadata={**sample.metadata, "remixed_from": int(perm[i])},
            )
        )
    return remixed


def bandmask_augment(sample: PairSample, seed: int, max_width: float = 0.2) -> PairSample:
    """Zero out a random mel-scale band (at most ``max_width`` of the mel
    axis) in the noisy signal via FFT masking; the clean target is untouched."""
    rng = np.random.default_rng(seed)
    width = rng.uniform(0.0, max_width)
    start = rng.uniform(0.0, 1.0 - width)
    sr = sample.noisy.sample_rate
    mel_top = hz_to_mel(sr / 2.0)
    f_lo = float(mel_to_hz(start * mel_top))
    f_hi = float(mel_to_hz((start + width) * mel_top))

    x = sample.noisy.numpy().astype(np.float64)
    spectrum = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(len(x), d=1.0 / sr)
    spectrum[(freqs >= f_lo) & (freqs < f_hi)] = 0.0
    masked = np.fft.irfft(spectrum, n=len(x)).astype(np.float32)
    return PairSample(
        clean=sample.clean,
        noisy=Waveform(torch.from_numpy(masked), sr),
        snr_db=sample.snr_db,
        metadata={**sample.metadata, "bandmask_hz": (f_lo, f_hi)},
    )


def load_wav_corpus(dir_clean, dir_noisy, expected_rate: int | None = 16000
                    ) -> Iterator[PairSample]:
    """Stream clean/noisy pairs matched by filename across two directories."""
    dir_clean, dir_noisy = Path(dir_clean), Path(dir_noisy)
    clean_names = {p.name for p in dir_clean.glob("*.wav")}
    noisy_names = {p.name for p in dir_noisy.glob("*.wav")}
    if clean_names != noisy_names:
        odd = sorted(clean_names.symmetric_difference(noisy_names))
        raise CorpusError(f"unmatched corpus files: {odd[:10]}")
    if not clean_names:
        raise CorpusError(f"no wav pairs found under {dir_clean} / {dir_noisy}")
    for name in sorted(clean_names):
        try:
            clean = read_wav(dir_clean / name, expected_rate)
            noisy = read_wav(dir_noisy / name, expected_rate)
        except ValueError as exc:
            raise CorpusError(str(exc)) from exc
        if len(clean) != len(noisy):
            raise CorpusError(f"{name}: clean/noisy lengths differ ({len(clean)} vs {len(noisy)})")
        yield PairSample(
            clean=clean,
            noisy=noisy,
            snr_db=measure_snr_db(clean, noisy),
            metadata={"name": name},
        )


def write_corpus(spec: CorpusSpec, out_dir) -> Path:
    """Render a synthetic corpus to ``out_dir`` (clean/, noisy/, manifest.txt)."""
    out_dir = Path(out_dir)
    (out_dir / "clean").mkdir(parents=True, exist_ok=True)
    (out_dir / "noisy").mkdir(parents=True, exist_ok=True)
    manifest: list[str] = []
    for i in range(spec.num_pairs):
        pair = synth_pair(spec, i)
        name = f"{i:05d}.wav"
        write_wav(out_dir / "clean" / name, pair.clean)
        write_wav(out_dir / "noisy" / name, pair.noisy)
        manifest.append(f"clean/{name}")
        manifest.append(f"noisy/{name}")
    manifest_path = out_dir / "manifest.txt"
    manifest_path.write_text("\n".join(manifest) + "\n")
    return manifest_path
