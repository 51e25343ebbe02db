"""Objective evaluation: SI-SDR, spectral distance, codebook reporting.

Standardized perceptual metrics (PESQ and the composite MOS predictors)
are not reimplemented here; ``evaluate`` reserves named slots that an
external adapter callable may fill.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import torch

from .features import FeatureBundle, stub_features
from .quantizer import CodebookSet, codebook_perplexity
from .signal import SilentReferenceError, StftConfig, Waveform, log_magnitude_loss
from .util import fingerprint_dataclass

SI_SDR_CAP_DB = 100.0
EXTERNAL_METRIC_SLOTS = ("pesq", "stoi", "csig", "cbak", "covl")

# Adapter seam: maps (clean, estimate) to externally computed metric values
# keyed by the slot names above.
ExternalMetricFn = Callable[[Waveform, Waveform], Mapping[str, float]]


def _as_f64(x) -> np.ndarray:
    if isinstance(x, Waveform):
        x = x.samples
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64).reshape(-1)


def si_sdr(y, yhat) -> float:
    """Scale-invariant source-to-distortion ratio in dB.

    Projects the estimate onto the reference; values are clamped to
    +/-100 dB so perfect or fully orthogonal estimates stay finite.
    """
    ref, est = _as_f64(y), _as_f64(yhat)
    if ref.shape != est.shape:
        raise ValueError(f"length mismatch: {ref.shape} vs {est.shape}")
    ref_power = float(np.dot(ref, ref))
    if ref_power == 0.0:
        raise SilentReferenceError("reference signal is silent; SI-SDR undefined")
    alpha = float(np.dot(est, ref)) / ref_power
    target = alpha * ref
    residual = est - target
    target_power = float(np.dot(target, target))
    residual_power = float(np.dot(residual, residual))
    if residual_power == 0.0:
        return SI_SDR_CAP_DB
    if target_power == 0.0:
        return -SI_SDR_CAP_DB
    value = 10.0 * math.log10(target_power / residual_power)
    return max(-SI_SDR_CAP_DB, min(SI_SDR_CAP_DB, value))


@dataclass
class EvalReport:
    """Corpus-level evaluation with per-file detail and codebook statistics."""

    schema_version: int
    config_fingerprint: str
    provider_id: str
    per_file: list[dict] = field(default_factory=list)
    means: dict = field(default_factory=dict)
    codebook_perplexities: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "schema_version": self.schema_version,
            "config_fingerprint": self.config_fingerprint,
            "provider_id": self.provider_id,
            "num_files": len(self.per_file),
            "means": self.means,
            "codebook_perplexities": self.codebook_perplexities,
            "per_file": self.per_file,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")


def default_feature_provider(feature_dim: int, seed: int = 0):
    return lambda wav: stub_features(wav, dim=feature_dim, seed=seed)


def evaluate(
    model,
    corpus,
    feature_provider=None,
    spectral_cfg: StftConfig = StftConfig(1024, 120, 600),
    external_metrics: ExternalMetricFn | None = None,
    max_items: int | None = None,
) -> EvalReport:
    """Run the model over a corpus of PairSamples and aggregate metrics.

    Every report row carries the noisy-baseline metrics next to the enhanced
    ones so improvement deltas are always computable.
    """
    model.eval()
    provider = feature_provider
    if provider is None and model.fusion is not None:
        provider = default_feature_provider(model.cfg.feature_dim)

    per_file = []
    selections: dict[int, list[torch.Tensor]] = {}
    provider_id = "none"
    for count, pair in enumerate(corpus):
        if max_items is not None and count >= max_items:
            break
        bundle = provider(pair.noisy) if provider is not None else None
        if isinstance(bundle, FeatureBundle):
            provider_id = bundle.provider_id
        enhanced, vq_outputs = model.enhance(pair.noisy, bundle, mode="eval")
        for site, out in vq_outputs.items():
            selections.setdefault(site, []).append(out.selections.reshape(-1, out.selections.shape[-1]))
        row = {
            "id": str(pair.metadata.get("name", pair.metadata.get("index", count))),
            "snr_db": float(pair.snr_db),
            "si_sdr_noisy": si_sdr(pair.clean, pair.noisy),
            "si_sdr_enhanced": si_sdr(pair.clean, enhanced),
            "spectral_distance_noisy": float(log_magnitude_loss(pair.clean, pair.noisy, spectral_cfg)),
            "spectral_distance_enhanced": float(log_magnitude_loss(pair.clean, enhanced, spectral_cfg)),
        }
        row.update({slot: None for slot in EXTERNAL_METRIC_SLOTS})
        if external_metrics is not None:
            extra = external_metrics(pair.clean, enhanced)
            unknown = set(extra) - set(EXTERNAL_METRIC_SLOTS)
            if unknown:
                raise ValueError(f"unknown external metric slots: {sorted(unknown)}")
            row.update({k: float(v) for k, v in extra.items()})
        per_file.append(row)

    if not per_file:
        raise ValueError("corpus produced no samples to evaluate")

    numeric_keys = [
        k for k in per_file[0] if isinstance(per_file[0][k], float) and k != "snr_db"
    ]
    means = {k: float(np.mean([row[k] for row in per_file])) for k in numeric_keys}
    perplexities = {
        site: [float(p) for p in codebook_perplexity(
            torch.cat(chunks, dim=0), model.cfg.vq_configs[site].codebook_size)]
        for site, chunks in sorted(selections.items())
    }
    return EvalReport(
        schema_version=1,
        config_fingerprint=fingerprint_dataclass(model.cfg),
        provider_id=provider_id,
        per_file=per_file,
        means=means,
        codebook_perplexities=perplexities,
    )


def measure_perplexities(model, corpus, feature_provider=None, max_items: int = 8
                         ) -> dict[int, float]:
    """Mean per-site codebook perplexity over a probe slice of the corpus."""
    model.eval()
    provider = feature_provider
    if provider is None and model.fusion is not None:
        provider = default_feature_provider(model.cfg.feature_dim)
    selections: dict[int, list[torch.Tensor]] = {}
    for count, pair in enumerate(corpus):
        if count >= max_items:
            break
        bundle = provider(pair.noisy) if provider is not None else None
        _, vq_outputs = model.enhance(pair.noisy, bundle, mode="eval")
        for site, out in vq_outputs.items():
            selections.setdefault(site, []).append(out.selections.reshape(-1, out.selections.shape[-1]))
    return {
        site: float(codebook_perplexity(
            torch.cat(chunks, dim=0), model.cfg.vq_configs[site].codebook_size).mean())
        for site, chunks in sorted(selections.items())
    }


def export_codebook_csv(books: CodebookSet, path):
    """Raw codeword dump: one row per codeword (book, index, d values)."""
    words = books.codewords.detach().cpu().numpy()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["book", "index"] + [f"c{i}" for i in range(books.codeword_dim)])
        for g in range(books.num_codebooks):
            for v in range(books.codebook_size):
                writer.writerow([g, v] + [repr(float(x)) for x in words[g, v]])


def codebook_pca(books: CodebookSet) -> np.ndarray:
    """Per-book 2-D PCA of the codewords, shape [G, V, 2]."""
    if books.codebook_size < 3:
        raise ValueError("need at least 3 codewords per book for a projection")
    words = books.codewords.detach().cpu().numpy().astype(np.float64)
    coords = np.zeros((books.num_codebooks, books.codebook_size, 2))
    for g in range(books.num_codebooks):
        centered = words[g] - words[g].mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        coords[g] = centered @ vt[:2].T
    return coords


def export_codebook_projection(books: CodebookSet, path, plot_path=None) -> np.ndarray:
    """Write per-book 2-D PCA coordinates as CSV (book, index, x, y).

    With ``plot_path`` set, also renders a scatter of all books (requires
    matplotlib).
    """
    coords = codebook_pca(books)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["book", "index", "x", "y"])
        for g in range(books.num_codebooks):
            for v in range(books.codebook_size):
                writer.writerow([g, v, repr(coords[g, v, 0]), repr(coords[g, v, 1])])
    if plot_path is not None:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 6))
        for g in range(books.num_codebooks):
            ax.scatter(coords[g, :, 0], coords[g, :, 1], s=6, alpha=0.6, label=f"book {g}")
        ax.set_xlabel("pc 1")
        ax.set_ylabel("pc 2")
        ax.legend()
        fig.tight_layout()
        fig.savefig(plot_path, dpi=120)
        plt.close(fig)
    return coords
