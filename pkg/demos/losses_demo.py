"""Walkthrough of the enhancement loss stack.

Builds a clean/noisy pair, looks at STFT magnitudes, and evaluates the
spectral convergence, log-magnitude, and combined losses, including the
identities that make them easy to sanity-check.

Run:  python demos/losses_demo.py
"""

import torch

from vqse import (
    MultiStftConfig,
    StftConfig,
    Waveform,
    log_magnitude_loss,
    se_loss,
    spectral_convergence_loss,
    stft_magnitude,
)
from vqse.data import CorpusSpec, synth_pair

print("=" * 60)
print("1. A clean/noisy pair")
print("=" * 60)
pair = synth_pair(CorpusSpec(num_pairs=1, seed=3), 0)
y, x = pair.clean, pair.noisy
print(f"duration {y.duration:.2f}s at {y.sample_rate} Hz, SNR {pair.snr_db:.0f} dB")

print()
print("=" * 60)
print("2. Magnitude spectrograms (frames = ceil(T / hop))")
print("=" * 60)
cfg = StftConfig(fft_size=512, hop=50, window_length=240)
mag = stft_magnitude(y, cfg)
print(f"T={len(y)} hop={cfg.hop} -> {mag.shape[0]} frames x {mag.shape[1]} bins")
print(f"peak bin frequency ~ {int(mag.sum(0).argmax()) * y.sample_rate / cfg.fft_size:.0f} Hz")

print()
print("=" * 60)
print("3. Loss identities")
print("=" * 60)
print(f"se_loss(y, y)                 = {float(se_loss(y, y)):.6f}   (exactly 0)")
print(f"sc_loss(y, 2y)                = "
      f"{float(spectral_convergence_loss(y.samples, 2 * y.samples, cfg)):.6f}   (exactly 1)")
for a in (0.5, 1.5, 3.0):
    val = float(spectral_convergence_loss(y.samples, a * y.samples, cfg))
    print(f"sc_loss(y, {a:.1f}y)              = {val:.6f}   (|a-1| = {abs(a-1):.1f})")

print()
print("=" * 60)
print("4. The combined loss on the noisy pair, term by term")
print("=" * 60)
multi = MultiStftConfig()
l1 = float((y.samples - x.samples).abs().mean())
print(f"time-domain L1 / T : {l1:.4f}")
for res in multi.resolutions:
    sc = float(spectral_convergence_loss(y, x, res))
    mag_l = float(log_magnitude_loss(y, x, res))
    print(f"fft={res.fft_size:5d} hop={res.hop:4d} win={res.window_length:5d} : "
          f"sc={sc:.4f}  log-mag={mag_l:.4f}")
print(f"se_loss total      : {float(se_loss(y, x, multi)):.4f}")

print()
print("=" * 60)
print("5. Differentiability: gradients flow to the estimate")
print("=" * 60)
estimate = x.samples.clone().requires_grad_(True)
loss = se_loss(y.samples, estimate, multi)
loss.backward()
print(f"grad shape {tuple(estimate.grad.shape)}, "
      f"grad norm {float(estimate.grad.norm()):.4f}")
