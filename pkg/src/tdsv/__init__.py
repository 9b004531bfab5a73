"""Embedding-agnostic text-dependent speaker verification toolkit:
scoring (cosine + symmetric cohort normalization + calibration + fusion +
phrase gating), SRE-style evaluation (EER, MinDCF, DET), waveform
augmentation, and a synthetic-embedding simulator for end-to-end checks.
"""

from .model import (
    ChannelSpec,
    ConfigError,
    DataError,
    DEFAULT_CHANNELS,
    Embedding,
    EmbeddingSet,
    FormatError,
    PHRASES,
    ScoreRecord,
    SpeakerModel,
    TdsvError,
    Trial,
)
from .scorer import (
    NormStats,
    ScoringOptions,
    cohort_stats,
    cosine,
    enroll_aggregate,
    fuse,
    gate,
    calibrate_minmax,
    s_norm,
    score_trials,
)
from .metrics import DcfParams, EvalReport, eer, min_dcf, probit, subset_eval, sweep

__version__ = "0.1.0"
