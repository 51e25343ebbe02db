"""Total loss assembly, the optimization loop, checkpoints, and ablations.

Training is deterministic on one device: batches are a pure function of
(seed, step), the only stateful randomness is the quantizers' noise
generator, and its state rides along in every checkpoint, so resuming
reproduces the uninterrupted run bit for bit.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .data import PairSample, bandmask_augment, remix_augment
from .features import stub_features
from .metrics import measure_perplexities
from .network import Enhancer, EnhancerConfig
from .quantizer import QuantizerOutput, codebook_perplexity
from .signal import (
    MultiStftConfig,
    Waveform,
    log_magnitude_loss,
    spectral_convergence_loss,
)
from .util import atomic_torch_save

CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the term breakdown for diagnosis."""

    def __init__(self, step: int, terms: Mapping[str, object]):
        self.step = step
        self.terms = dict(terms)
        dump = ", ".join(
            f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
            for k, v in self.terms.items()
        )
        super().__init__(f"training diverged at step {step}: {dump}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; defaults are desk-scale."""

    lr_max: float = 2e-4
    batch_size: int = 8
    total_steps: int = 2000
    lambdas: tuple[float, ...] | None = None  # per-site diversity weights, default 0.01 each
    seed: int = 0
    checkpoint_interval: int = 500
    segment_length: int = 8000
    warmup_fraction: float = 0.05
    grad_clip: float = 5.0
    remix: bool = True
    bandmask: bool = True
    history_size: int = 10000

    def __post_init__(self):
        if self.lr_max <= 0:
            raise ValueError("lr_max must be positive")
        if self.total_steps < 1 or self.batch_size < 1:
            raise ValueError("total_steps and batch_size must be >= 1")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must be in [0, 1)")


def full_scale_train_config() -> TrainConfig:
    """Full-scale settings: Adam at 2e-4, batch 30, one million steps."""
    return TrainConfig(lr_max=2e-4, batch_size=30, total_steps=1_000_000,
                       segment_length=64000, checkpoint_interval=10_000)


@dataclass
class TrainState:
    """Resumable snapshot of a training run."""

    step: int
    model_state: dict
    optimizer_state: dict
    temperature_step: int
    noise_rng_state: torch.Tensor
    loss_history: list = field(default_factory=list)


def lambda_vector(cfg: TrainConfig, num_sites: int) -> tuple[float, ...]:
    if cfg.lambdas is None:
        return (0.01,) * num_sites
    if len(cfg.lambdas) != num_sites:
        raise ValueError(f"lambdas has {len(cfg.lambdas)} entries, model has {num_sites} VQ sites")
    return tuple(float(v) for v in cfg.lambdas)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup over the first warmup_fraction of steps, then cosine decay."""
    warmup = max(1, round(cfg.warmup_fraction * cfg.total_steps))
    if step < warmup:
        return cfg.lr_max * (step + 1) / warmup
    span = max(1, cfg.total_steps - warmup)
    progress = min(1.0, (step - warmup) / span)
    return cfg.lr_max * 0.5 * (1.0 + math.cos(math.pi * progress))


def total_loss(
    yhat,
    y,
    vq_outputs: Mapping[int, QuantizerOutput],
    lambdas,
    stft_cfg: MultiStftConfig | None = None,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Enhancement loss plus weighted per-site diversity losses.

    Returns the scalar total and a flat term dict whose values sum to it.
    """
    if stft_cfg is None:
        stft_cfg = MultiStftConfig()
    for site in vq_outputs:
        if site >= len(lambdas) or site < 0:
            raise ValueError(f"no diversity weight for VQ site {site} (got {len(lambdas)} weights)")

    yb = yhat if isinstance(yhat, torch.Tensor) else yhat.samples
    tb = y if isinstance(y, torch.Tensor) else y.samples
    if yb.ndim == 1:
        yb, tb = yb.unsqueeze(0), tb.unsqueeze(0)
    # Accumulate in float64 (mirroring se_loss exactly) so the total equals
    # both se_loss and the sum of the reported terms.
    terms: dict[str, torch.Tensor] = {}
    terms["l1_time"] = (tb - yb).abs().sum(dim=-1).mean() / tb.shape[-1]
    total = terms["l1_time"].double()
    for k, res in enumerate(stft_cfg.resolutions):
        sc = spectral_convergence_loss(tb, yb, res)
        mag = log_magnitude_loss(tb, yb, res)
        terms[f"sc{k}"] = sc
        terms[f"mag{k}"] = mag
        total = total + (sc + mag).double()
    for site in sorted(vq_outputs):
        weighted = lambdas[site] * vq_outputs[site].diversity_loss
        terms[f"div{site}"] = weighted
        total = total + weighted.double()
    return total, terms


def _crop_or_pad(sample: PairSample, length: int, rng: np.random.Generator) -> PairSample:
    clean, noisy = sample.clean.samples, sample.noisy.samples
    n = clean.shape[0]
    if n > length:
        # Anchor the crop on an active clean sample so spectral references
        # never go silent.
        active = torch.nonzero(clean.abs() >= 0.01).squeeze(-1)
        anchor = int(active[rng.integers(len(active))]) if len(active) else n // 2
        offset = min(max(anchor - length // 2, 0), n - length)
        jitter = int(rng.integers(-length // 4, length // 4 + 1))
        offset = min(max(offset + jitter, 0), n - length)
        clean, noisy = clean[offset : offset + length], noisy[offset : offset + length]
    elif n < length:
        pad = torch.zeros(length - n, dtype=clean.dtype)
        clean, noisy = torch.cat([clean, pad]), torch.cat([noisy, pad])
    sr = sample.clean.sample_rate
    return PairSample(Waveform(clean, sr), Waveform(noisy, sr), sample.snr_db, sample.metadata)


def make_batch(corpus, cfg: TrainConfig, step: int) -> list[PairSample]:
    """Deterministic batch for ``step``: sample, crop, remix, bandmask."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1000003, step]))
    indices = rng.integers(0, len(corpus), size=cfg.batch_size)
    batch = [_crop_or_pad(corpus[int(i)], cfg.segment_length, rng) for i in indices]
    if cfg.remix and len(batch) >= 2:
        batch = remix_augment(batch, seed=int(rng.integers(2**31)))
    if cfg.bandmask:
        batch = [bandmask_augment(s, seed=int(rng.integers(2**31))) for s in batch]
    return batch


def _batch_tensors(batch: list[PairSample], model: Enhancer, feature_provider):
    clean = torch.stack([s.clean.samples for s in batch])
    noisy = torch.stack([s.noisy.samples for s in batch])
    context = None
    if model.fusion is not None:
        bundles = [feature_provider(s.noisy) for s in batch]
        context = torch.stack([b.features for b in bundles])
    return clean, noisy, context


def save_checkpoint(path, model: Enhancer, optimizer, step: int,
                    noise_generator: torch.Generator, loss_history,
                    train_cfg: TrainConfig | None = None):
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "enhancer_config": model.cfg,
        "train_config": train_cfg,
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict(),
        "step": step,
        "temperature_step": step,
        "noise_rng_state": noise_generator.get_state(),
        "loss_history": list(loss_history),
    }
    atomic_torch_save(payload, path)


def load_checkpoint(path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    return payload


def build_enhancer(cfg: EnhancerConfig, seed: int = 0) -> Enhancer:
    """Construct an enhancer with seeded parameter initialization."""
    torch.manual_seed(seed)
    return Enhancer(cfg)


def load_model(path) -> tuple[Enhancer, dict]:
    """Rebuild the model stored in a checkpoint."""
    payload = load_checkpoint(path)
    model = Enhancer(payload["enhancer_config"])
    model.load_state_dict(payload["model"])
    model.set_step(payload["temperature_step"])
    return model, payload


def train(
    model: Enhancer,
    corpus,
    cfg: TrainConfig,
    stft_cfg: MultiStftConfig | None = None,
    feature_provider=None,
    out_dir=None,
    log_path=None,
    resume_from=None,
) -> TrainState:
    """Run the optimization loop.

    Args:
        model: enhancer to optimize in place.
        corpus: indexable collection of PairSamples.
        cfg: optimization settings.
        stft_cfg: spectral loss resolutions (defaults to the standard three).
        feature_provider: Waveform -> FeatureBundle; defaults to the log-mel
            stub at the model's feature dim.
        out_dir: directory for periodic checkpoints (checkpoint.pt).
        log_path: newline-delimited JSON training log.
        resume_from: checkpoint path; restores parameters, optimizer moments,
            temperatures, noise RNG, and history, then continues to
            cfg.total_steps.

    Returns:
        Final TrainState snapshot.
    """
    if stft_cfg is None:
        stft_cfg = MultiStftConfig()
    if feature_provider is None and model.fusion is not None:
        dim = model.cfg.feature_dim
        seed = cfg.seed
        feature_provider = lambda wav: stub_features(wav, dim=dim, seed=seed)
    lambdas = lambda_vector(cfg, model.cfg.depth + 1)

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr_max)
    noise_generator = torch.Generator()
    noise_generator.manual_seed(cfg.seed)
    history: deque = deque(maxlen=cfg.history_size)
    start_step = 0

    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        model.load_state_dict(payload["model"])
        optimizer.load_state_dict(payload["optimizer"])
        noise_generator.set_state(payload["noise_rng_state"])
        history.extend(payload["loss_history"])
        start_step = payload["step"]

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    log_fh = open(log_path, "a") if log_path is not None else None

    model.train()
    model.set_step(start_step)
    try:
        for step in range(start_step, cfg.total_steps):
            batch = make_batch(corpus, cfg, step)
            clean, noisy, context = _batch_tensors(batch, model, feature_provider)
            try:
                yhat, vq_outputs = model(
                    noisy.unsqueeze(1), context, mode="train", generator=noise_generator
                )
                loss, terms = total_loss(yhat[:, 0, :], clean, vq_outputs, lambdas, stft_cfg)
            except ValueError as exc:
                # Batches are pre-validated, so non-finite values mid-forward
                # mean the optimization itself blew up.
                if "non-finite" in str(exc):
                    raise TrainingDivergedError(step, {"note": str(exc)}) from exc
                raise
            if not bool(torch.isfinite(loss.detach())):
                raise TrainingDivergedError(step, {k: float(v.detach()) for k, v in terms.items()})

            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            lr = lr_at(step, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.step()
            model.set_step(step + 1)  # temperature decay closes the step

            entry = {"step": step, "lr": lr, "total": float(loss.detach())}
            entry.update({k: float(v.detach()) for k, v in terms.items()})
            entry["se"] = entry["total"] - sum(
                entry[k] for k in entry if k.startswith("div")
            )
            history.append(entry)

            if log_fh is not None:
                record = dict(entry)
                record["temperatures"] = model.temperatures()
                record["perplexities"] = {
                    site: float(codebook_perplexity(
                        out.selections, model.cfg.vq_configs[site].codebook_size).mean())
                    for site, out in vq_outputs.items()
                }
                log_fh.write(json.dumps(record) + "\n")

            done = step + 1
            if out_dir is not None and (
                done % cfg.checkpoint_interval == 0 or done == cfg.total_steps
            ):
                save_checkpoint(out_dir / f"checkpoint_{done:08d}.pt", model, optimizer,
                                done, noise_generator, history, cfg)
                save_checkpoint(out_dir / "checkpoint.pt", model, optimizer, done,
                                noise_generator, history, cfg)
    finally:
        if log_fh is not None:
            log_fh.close()

    return TrainState(
        step=cfg.total_steps,
        model_state=model.state_dict(),
        optimizer_state=optimizer.state_dict(),
        temperature_step=cfg.total_steps,
        noise_rng_state=noise_generator.get_state(),
        loss_history=list(history),
    )


def default_ablation_masks(num_sites: int) -> list[tuple[bool, ...]]:
    """All-on plus each single-site-off: num_sites + 1 masks."""
    masks = [tuple(True for _ in range(num_sites))]
    for i in range(num_sites):
        masks.append(tuple(j != i for j in range(num_sites)))
    return masks


@dataclass
class AblationReport:
    """One row per quantizer mask: final losses and codebook perplexities."""

    rows: list[dict]

    def to_json(self) -> str:
        return json.dumps({"schema_version": 1, "rows": self.rows}, indent=2)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json() + "\n")

    def to_text(self) -> str:
        if not self.rows:
            return "(empty ablation report)"
        num_sites = len(self.rows[0]["mask"])
        header = " ".join(f"vq{i}" for i in range(num_sites))
        lines = [f"{header}  final_se  final_total  mean_perplexity"]
        for row in self.rows:
            flags = " ".join(" + " if on else " - " for on in row["mask"])
            pplx = row["mean_perplexity"]
            pplx_txt = f"{pplx:.2f}" if pplx is not None else "n/a"
            lines.append(f"{flags}  {row['final_se']:.5f}  {row['final_total']:.5f}  {pplx_txt}")
        return "\n".join(lines)


def run_ablation(
    masks,
    enhancer_cfg: EnhancerConfig,
    train_cfg: TrainConfig,
    corpus,
    stft_cfg: MultiStftConfig | None = None,
    feature_provider=None,
    probe_items: int = 4,
) -> AblationReport:
    """Train one identically seeded model per quantizer mask and report."""
    rows = []
    for mask in masks:
        if len(mask) != enhancer_cfg.depth + 1:
            raise ValueError(f"mask {mask} must have {enhancer_cfg.depth + 1} entries")
        model = build_enhancer(enhancer_cfg.with_mask(mask), seed=train_cfg.seed)
        state = train(model, corpus, train_cfg, stft_cfg, feature_provider)
        tail = state.loss_history[-10:]
        perplexities = measure_perplexities(
            model, corpus, feature_provider, max_items=probe_items
        )
        rows.append(
            {
                "mask": [bool(b) for b in mask],
                "final_total": float(np.mean([h["total"] for h in tail])),
                "final_se": float(np.mean([h["se"] for h in tail])),
                "perplexities": {str(site): val for site, val in perplexities.items()},
                "mean_perplexity": (
                    float(np.mean(list(perplexities.values()))) if perplexities else None
                ),
            }
        )
    return AblationReport(rows=rows)
