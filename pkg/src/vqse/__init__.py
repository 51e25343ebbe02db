"""vqse: waveform speech enhancement with multi-granularity vector quantization."""

from .signal import (
    MultiStftConfig,
    SilentReferenceError,
    StftConfig,
    Waveform,
    log_magnitude_loss,
    se_loss,
    spectral_convergence_loss,
    stft_magnitude,
)
from .quantizer import (
    CodebookSet,
    GumbelProductQuantizer,
    QuantizerConfig,
    QuantizerOutput,
    TemperatureSchedule,
    codebook_perplexity,
    diversity_loss,
)
from .features import FeatureBundle, load_precomputed, save_precomputed, stub_features
from .network import (
    Enhancer,
    EnhancerConfig,
    LayerActivations,
    desk_config,
    pad_input,
    full_scale_config,
)
from .data import (
    CorpusSpec,
    PairSample,
    SyntheticCorpus,
    bandmask_augment,
    load_wav_corpus,
    measure_snr_db,
    remix_augment,
    synth_pair,
)
from .training import (
    TrainConfig,
    TrainState,
    build_enhancer,
    default_ablation_masks,
    load_model,
    run_ablation,
    total_loss,
    train,
)
from .metrics import EvalReport, evaluate, export_codebook_projection, si_sdr
from .audio_io import read_wav, write_wav

__version__ = "0.1.0"

__all__ = [
    "MultiStftConfig",
    "SilentReferenceError",
    "StftConfig",
    "Waveform",
    "log_magnitude_loss",
    "se_loss",
    "spectral_convergence_loss",
    "stft_magnitude",
    "CodebookSet",
    "GumbelProductQuantizer",
    "QuantizerConfig",
    "QuantizerOutput",
    "TemperatureSchedule",
    "codebook_perplexity",
    "diversity_loss",
    "FeatureBundle",
    "load_precomputed",
    "save_precomputed",
    "stub_features",
    "Enhancer",
    "EnhancerConfig",
    "LayerActivations",
    "desk_config",
    "pad_input",
    "full_scale_config",
    "CorpusSpec",
    "PairSample",
    "SyntheticCorpus",
    "bandmask_augment",
    "load_wav_corpus",
    "measure_snr_db",
    "remix_augment",
    "synth_pair",
    "TrainConfig",
    "TrainState",
    "build_enhancer",
    "default_ablation_masks",
    "load_model",
    "run_ablation",
    "total_loss",
    "train",
    "EvalReport",
    "evaluate",
    "export_codebook_projection",
    "si_sdr",
    "read_wav",
    "write_wav",
]
