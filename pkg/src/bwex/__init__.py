"""Speech bandwidth extension by hierarchical recurrent waveform models.

The package maps 8 kHz narrowband speech to 16 kHz wideband speech by
predicting mu-law waveform levels sample by sample.  `dsp` holds the
signal path, `nn` the numpy neural toolkit, `models` the sample-level and
hierarchical architectures, `data`/`train` the corpus and training
machinery, and `metrics` the objective evaluation suite.
"""

from .dsp import (
    ConditionTrack,
    FirFilter,
    MfccConfig,
    QuantizedWaveform,
    Waveform,
    mulaw_decode,
    mulaw_encode,
)
from .models import (
    Hrnn,
    HrnnConfig,
    Srnn,
    SrnnConfig,
    TierSpec,
    build_model,
    generate,
    max_latency_ms,
)
from .data import CorpusManifest, UtterancePair, build_pair, load_wav, save_wav
from .train import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train, validate
from .metrics import lsd, reconstruct_wideband, snr

__version__ = "0.1.0"

__all__ = [
    "ConditionTrack",
    "FirFilter",
    "MfccConfig",
    "QuantizedWaveform",
    "Waveform",
    "mulaw_decode",
    "mulaw_encode",
    "Hrnn",
    "HrnnConfig",
    "Srnn",
    "SrnnConfig",
    "TierSpec",
    "build_model",
    "generate",
    "max_latency_ms",
    "CorpusManifest",
    "UtterancePair",
    "build_pair",
    "load_wav",
    "save_wav",
    "Checkpoint",
    "TrainConfig",
    "load_checkpoint",
    "save_checkpoint",
    "train",
    "validate",
    "lsd",
    "snr",
    "reconstruct_wideband",
    "__version__",
]
