"""Operator entry points: train, enhance, eval, inspect-codebooks,
synth-corpus, ablate.

Exit codes: 0 success, 2 configuration error, 3 runtime error. Inputs are
validated before any output is written, and every subcommand drops the
resolved configuration and its fingerprint next to its outputs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from . import config as config_mod
from .audio_io import read_wav, write_wav
from .config import ConfigError, RunConfig, load_run_config
from .data import SyntheticCorpus, load_wav_corpus, write_corpus
from .features import load_precomputed, stub_features
from .metrics import evaluate, export_codebook_csv, export_codebook_projection
from .training import (
    build_enhancer,
    default_ablation_masks,
    load_model,
    run_ablation,
    train,
)


def _add_common(parser: argparse.ArgumentParser, checkpoint=False, grid=False):
    parser.add_argument("--config", help="YAML run configuration file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted-key config override, repeatable",
    )
    parser.add_argument("--seed", type=int, help="override every per-module seed")
    parser.add_argument("--output-dir", required=True, help="directory for all outputs")
    if checkpoint:
        parser.add_argument("--checkpoint", required=True, help="model checkpoint path")
    if grid:
        parser.add_argument("--grid", help="YAML file with a list of VQ enable masks")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vqse", description="vector-quantized speech enhancement toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _add_common(sub.add_parser("train", help="train a model on the configured corpus"))
    _add_common(sub.add_parser("synth-corpus", help="render the synthetic corpus to wav files"))

    enhance = sub.add_parser("enhance", help="denoise wav files with a trained model")
    _add_common(enhance, checkpoint=True)
    enhance.add_argument("--input", required=True, help="wav file or directory of wav files")

    evalp = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    _add_common(evalp, checkpoint=True)
    evalp.add_argument("--clean-dir", help="evaluate on wav pairs instead of the synthetic corpus")
    evalp.add_argument("--noisy-dir", help="paired noisy wav directory")

    inspect = sub.add_parser("inspect-codebooks", help="export codewords and PCA projections")
    _add_common(inspect, checkpoint=True)
    inspect.add_argument("--plot", action="store_true", help="also render scatter images")

    _add_common(sub.add_parser("ablate", help="train one model per VQ mask and report"),
                grid=True)
    return parser


def _prepare_output_dir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_metadata(out_dir: Path, cfg):
    if isinstance(cfg, RunConfig):
        config_mod.dump_run_config(cfg, out_dir / "resolved_config.yaml")
    else:
        with open(out_dir / "resolved_config.yaml", "w") as fh:
            yaml.safe_dump(config_mod.to_dict(cfg), fh, sort_keys=False)
    (out_dir / "fingerprint.txt").write_text(config_mod.fingerprint(cfg) + "\n")


def _feature_provider(run_cfg: RunConfig):
    spec = run_cfg.features
    if spec.provider == "none" or not run_cfg.enhancer.fusion_enabled:
        return None
    if spec.provider == "stub":
        return lambda wav: stub_features(wav, dim=spec.dim, seed=spec.seed)
    raise ConfigError("precomputed features are only supported by the enhance command")


def _provider_for_file(run_cfg: RunConfig, model, wav_path: Path, wav):
    spec = run_cfg.features
    if model.fusion is None or spec.provider == "none":
        return None
    if spec.provider == "stub":
        return stub_features(wav, dim=model.cfg.feature_dim, seed=spec.seed)
    directory = Path(spec.directory) if spec.directory else wav_path.parent
    feat_path = directory / (wav_path.stem + ".feat")
    if not feat_path.exists():
        raise FileNotFoundError(f"no precomputed features at {feat_path}")
    return load_precomputed(feat_path, model.cfg.feature_dim)


def cmd_train(args) -> int:
    run_cfg = load_run_config(args.config, args.overrides, args.seed)
    out_dir = _prepare_output_dir(args)
    _write_metadata(out_dir, run_cfg)
    corpus = SyntheticCorpus(run_cfg.corpus)
    model = build_enhancer(run_cfg.enhancer, seed=run_cfg.training.seed)
    train(
        model,
        corpus,
        run_cfg.training,
        stft_cfg=run_cfg.loss,
        feature_provider=_feature_provider(run_cfg),
        out_dir=out_dir,
        log_path=out_dir / "train_log.jsonl",
    )
    print(f"trained {run_cfg.training.total_steps} steps; checkpoint at "
          f"{out_dir / 'checkpoint.pt'}")
    return 0


def cmd_synth_corpus(args) -> int:
    run_cfg = load_run_config(args.config, args.overrides, args.seed)
    out_dir = _prepare_output_dir(args)
    _write_metadata(out_dir, run_cfg)
    manifest = write_corpus(run_cfg.corpus, out_dir)
    print(f"wrote {run_cfg.corpus.num_pairs} pairs; manifest at {manifest}")
    return 0


def cmd_enhance(args) -> int:
    run_cfg = load_run_config(args.config, args.overrides, args.seed)
    checkpoint = Path(args.checkpoint)
    if not checkpoint.exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    in_path = Path(args.input)
    if in_path.is_dir():
        wav_paths = sorted(in_path.glob("*.wav"))
        if not wav_paths:
            raise FileNotFoundError(f"no wav files under {in_path}")
    elif in_path.exists():
        wav_paths = [in_path]
    else:
        raise FileNotFoundError(f"input not found: {in_path}")

    model, _ = load_model(checkpoint)
    out_dir = _prepare_output_dir(args)
    _write_metadata(out_dir, model.cfg)
    for wav_path in wav_paths:
        wav = read_wav(wav_path, expected_rate=None)
        bundle = _provider_for_file(run_cfg, model, wav_path, wav)
        enhanced, _ = model.enhance(wav, bundle, mode="eval")
        write_wav(out_dir / wav_path.name, enhanced)
    print(f"enhanced {len(wav_paths)} file(s) into {out_dir}")
    return 0


def cmd_eval(args) -> int:
    run_cfg = load_run_config(args.config, args.overrides, args.seed)
    checkpoint = Path(args.checkpoint)
    if not checkpoint.exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    if bool(args.clean_dir) != bool(args.noisy_dir):
        raise ConfigError("--clean-dir and --noisy-dir must be given together")
    model, _ = load_model(checkpoint)
    if args.clean_dir:
        corpus = list(load_wav_corpus(args.clean_dir, args.noisy_dir,
                                      expected_rate=run_cfg.corpus.sample_rate))
    else:
        corpus = SyntheticCorpus(run_cfg.corpus)
    out_dir = _prepare_output_dir(args)
    _write_metadata(out_dir, model.cfg)
    report = evaluate(model, corpus, feature_provider=_feature_provider(run_cfg))
    report.save(out_dir / "eval_report.json")
    enhanced = report.means.get("si_sdr_enhanced", float("nan"))
    noisy = report.means.get("si_sdr_noisy", float("nan"))
    print(f"evaluated {len(report.per_file)} files: "
          f"SI-SDR {noisy:.2f} dB noisy -> {enhanced:.2f} dB enhanced")
    print(f"report at {out_dir / 'eval_report.json'}")
    return 0


def cmd_inspect_codebooks(args) -> int:
    checkpoint = Path(args.checkpoint)
    if not checkpoint.exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    model, _ = load_model(checkpoint)
    out_dir = _prepare_output_dir(args)
    _write_metadata(out_dir, model.cfg)
    quantizers = {}
    if "0" in model.quantizers:
        quantizers[0] = model.quantizers["0"]
    for key, block in model.vq_blocks.items():
        quantizers[int(key)] = block.quantizer
    for site in sorted(quantizers):
        books = quantizers[site].codebook_set
        export_codebook_csv(books, out_dir / f"vq{site}_codewords.csv")
        plot = (out_dir / f"vq{site}_pca.png") if args.plot else None
        export_codebook_projection(books, out_dir / f"vq{site}_pca.csv", plot_path=plot)
    print(f"exported {len(quantizers)} codebook set(s) into {out_dir}")
    return 0


def _load_grid(path, num_sites: int):
    if path is None:
        return default_ablation_masks(num_sites)
    try:
        loaded = yaml.safe_load(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"grid file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"grid file {path}: invalid YAML ({exc})") from exc
    if isinstance(loaded, dict):
        loaded = loaded.get("masks")
    if not isinstance(loaded, list) or not loaded:
        raise ConfigError(f"grid file {path}: expected a non-empty list of masks")
    masks = []
    for i, mask in enumerate(loaded):
        if not isinstance(mask, list) or len(mask) != num_sites or not all(
            isinstance(b, bool) for b in mask
        ):
            raise ConfigError(f"grid file {path}: mask {i} must be {num_sites} booleans")
        masks.append(tuple(mask))
    return masks


def cmd_ablate(args) -> int:
    run_cfg = load_run_config(args.config, args.overrides, args.seed)
    masks = _load_grid(args.grid, run_cfg.enhancer.depth + 1)
    out_dir = _prepare_output_dir(args)
    _write_metadata(out_dir, run_cfg)
    corpus = SyntheticCorpus(run_cfg.corpus)
    report = run_ablation(
        masks,
        run_cfg.enhancer,
        run_cfg.training,
        corpus,
        stft_cfg=run_cfg.loss,
        feature_provider=_feature_provider(run_cfg),
    )
    report.save(out_dir / "ablation_report.json")
    print(report.to_text())
    print(f"report at {out_dir / 'ablation_report.json'}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "synth-corpus": cmd_synth_corpus,
    "enhance": cmd_enhance,
    "eval": cmd_eval,
    "inspect-codebooks": cmd_inspect_codebooks,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures map to a distinct exit code
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
