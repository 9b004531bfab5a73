"""Verification scoring: cosine similarity, cohort statistics, symmetric
score normalization, probability calibration, ensemble fusion, and phrase
gating.

The batch entry point is `score_trials`, which runs every trial through the
full chain (raw cosine -> normalized -> calibrated -> fused -> gated) with
cohort statistics computed exactly once per distinct embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .model import (
    ChannelSpec,
    DataError,
    DEFAULT_CHANNELS,
    Embedding,
    EmbeddingSet,
    PHRASE_BY_ID,
    ScoreRecord,
    SpeakerModel,
    Trial,
    check_channel_registry,
)


@dataclass(frozen=True)
class NormStats:
    """Mean and population standard deviation of a probe's cohort scores."""

    mean: float
    std: float
    cohort_size: int

    def __post_init__(self):
        if self.cohort_size < 2:
            raise DataError(f"cohort_size must be >= 2, got {self.cohort_size}")
        if not (self.std >= 0.0):
            raise DataError(f"std must be non-negative, got {self.std}")


@dataclass(frozen=True)
class ScoringOptions:
    cohort_limit: int = 10000
    adaptive_top_k: int | None = None
    std_floor: float = 1e-12
    calibration: str = "minmax"
    fusion_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.cohort_limit < 1:
            raise DataError(f"cohort_limit must be positive, got {self.cohort_limit}")
        if self.adaptive_top_k is not None:
            if self.adaptive_top_k < 1:
                raise DataError(f"adaptive_top_k must be positive, got {self.adaptive_top_k}")
            if self.adaptive_top_k > self.cohort_limit:
                raise DataError(
                    f"adaptive_top_k {self.adaptive_top_k} exceeds cohort_limit {self.cohort_limit}"
                )
        if not (self.std_floor > 0.0):
            raise DataError(f"std_floor must be positive, got {self.std_floor}")
        if self.calibration not in ("minmax", "sigmoid"):
            raise DataError(f"unknown calibration {self.calibration!r}")


def _unit_rows(matrix: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0.0):
        idx = int(np.argmin(norms))
        raise DataError(f"{what}: zero-norm vector at row {idx}")
    return matrix / norms[:, None]


def cosine(a: Embedding, b: Embedding) -> float:
    """Cosine similarity, clamped to [-1, 1] against rounding."""
    if a.channel != b.channel:
        raise DataError(f"channel mismatch: {a.channel!r} vs {b.channel!r}")
    if a.dim != b.dim:
        raise DataError(f"dim mismatch: {a.dim} vs {b.dim}")
    na = float(np.linalg.norm(a.vector))
    nb = float(np.linalg.norm(b.vector))
    if na == 0.0 or nb == 0.0:
        raise DataError(
            f"zero-norm vector in cosine({a.utterance_id!r}, {b.utterance_id!r})"
        )
    value = float(np.dot(a.vector, b.vector) / (na * nb))
    return min(1.0, max(-1.0, value))


def truncate_cohort(cohort: EmbeddingSet, limit: int) -> np.ndarray:
    """First `limit` cohort rows in file order (deterministic truncation)."""
    matrix = cohort.vectors[:limit]
    if matrix.shape[0] < 2:
        raise DataError(
            f"cohort for channel {cohort.channel!r} has {matrix.shape[0]} usable "
            f"embeddings after limit {limit}; need at least 2"
        )
    return matrix


def cohort_stats(probe: Embedding, cohort: EmbeddingSet,
                 opts: ScoringOptions = ScoringOptions()) -> NormStats:
    """Mean/std of the probe's cosine scores against the (possibly truncated,
    possibly top-k restricted) cohort."""
    if probe.channel != cohort.channel:
        raise DataError(
            f"probe channel {probe.channel!r} != cohort channel {cohort.channel!r}"
        )
    if probe.dim != cohort.dim:
        raise DataError(f"probe dim {probe.dim} != cohort dim {cohort.dim}")
    matrix = truncate_cohort(cohort, opts.cohort_limit)
    cohort_unit = _unit_rows(matrix, "cohort")
    probe_unit = _unit_rows(probe.vector[None, :], f"probe {probe.utterance_id!r}")
    top_k = opts.adaptive_top_k or 0
    means, stds = _kernels.cohort_mean_std(cohort_unit, probe_unit, top_k, opts.std_floor)
    return NormStats(float(means[0]), float(stds[0]), matrix.shape[0])


def s_norm(raw: float, enroll_stats: NormStats, trial_stats: NormStats) -> float:
    """Symmetric score normalization: the sum of the trial-side and
    enrollment-side z-scores of the raw similarity."""
    return (raw - trial_stats.mean) / trial_stats.std + (raw - enroll_stats.mean) / enroll_stats.std


def enroll_aggregate(parts: Sequence[Embedding], result_id: str | None = None) -> Embedding:
    """Aggregate exactly three enrollment embeddings into one unit-norm model
    embedding (component-wise mean, then L2 normalization)."""
    if len(parts) != 3:
        raise DataError(f"enrollment aggregation needs exactly 3 embeddings, got {len(parts)}")
    channel = parts[0].channel
    dim = parts[0].dim
    for p in parts[1:]:
        if p.channel != channel:
            raise DataError(f"mixed channels in enrollment: {channel!r} vs {p.channel!r}")
        if p.dim != dim:
            raise DataError(f"mixed dims in enrollment: {dim} vs {p.dim}")
    mean = (parts[0].vector + parts[1].vector + parts[2].vector) / 3.0
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        raise DataError("enrollment mean has zero norm")
    return Embedding(result_id or parts[0].utterance_id, channel, mean / norm)


def calibrate_minmax(scores: Sequence[float]) -> list[float]:
    """Affine map of scores onto [0, 1]; constant inputs all map to 0.5."""
    if len(scores) < 2:
        raise DataError(f"calibration needs at least 2 scores, got {len(scores)}")
    arr = np.asarray(scores, dtype=np.float64)
    return [float(v) for v in _calibrate_array(arr, "minmax")]


def calibrate_sigmoid(scores: Sequence[float]) -> list[float]:
    """Parameter-free logistic squashing onto (0, 1); rank-preserving."""
    if len(scores) < 2:
        raise DataError(f"calibration needs at least 2 scores, got {len(scores)}")
    arr = np.asarray(scores, dtype=np.float64)
    return [float(v) for v in _calibrate_array(arr, "sigmoid")]


def _calibrate_array(arr: np.ndarray, method: str) -> np.ndarray:
    if method == "sigmoid":
        return 1.0 / (1.0 + np.exp(-arr))
    lo = float(arr.min())
    hi = float(arr.max())
    if hi == lo:
        return np.full_like(arr, 0.5)
    return (arr - lo) / (hi - lo)


def fuse(per_channel_probs: Sequence[float],
         weights: Sequence[float] | None = None) -> float:
    """Weighted arithmetic mean of per-channel probabilities (uniform default)."""
    if len(per_channel_probs) < 1:
        raise DataError("fusion needs at least one probability")
    probs = np.asarray(per_channel_probs, dtype=np.float64)
    if weights is None:
        return float(probs.mean())
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != probs.shape:
        raise DataError(f"{len(weights)} weights for {len(per_channel_probs)} probabilities")
    if np.any(w < 0.0):
        raise DataError("fusion weights must be non-negative")
    total = float(w.sum())
    if total <= 0.0:
        raise DataError("fusion weights sum to zero")
    return float(np.dot(probs, w) / total)


def gate(speaker_prob: float, phrase_prob: float) -> float:
    """Final decision score: speaker probability scaled by the phrase posterior."""
    for name, v in (("speaker_prob", speaker_prob), ("phrase_prob", phrase_prob)):
        if not (0.0 <= v <= 1.0):
            raise DataError(f"{name} {v} outside [0, 1]")
    return speaker_prob * phrase_prob


@dataclass
class ScoringRun:
    """Batch scoring output plus diagnostics used by tests and benchmarks."""

    records: list[ScoreRecord]
    stats_computations: dict[str, int] = field(default_factory=dict)
    backend: str = _kernels.BACKEND


def score_trials(models: Sequence[SpeakerModel],
                 tests: Mapping[str, EmbeddingSet],
                 trials: Sequence[Trial],
                 cohorts: Mapping[str, EmbeddingSet],
                 phrase_posteriors: Mapping[str, np.ndarray],
                 opts: ScoringOptions = ScoringOptions(),
                 channels: Sequence[ChannelSpec] = DEFAULT_CHANNELS,
                 threads: int | None = None) -> list[ScoreRecord]:
    """Score every trial through the full chain; output order = trial order."""
    return score_trials_detailed(
        models, tests, trials, cohorts, phrase_posteriors, opts, channels, threads
    ).records


def score_trials_detailed(models: Sequence[SpeakerModel],
                          tests: Mapping[str, EmbeddingSet],
                          trials: Sequence[Trial],
                          cohorts: Mapping[str, EmbeddingSet],
                          phrase_posteriors: Mapping[str, np.ndarray],
                          opts: ScoringOptions = ScoringOptions(),
                          channels: Sequence[ChannelSpec] = DEFAULT_CHANNELS,
                          threads: int | None = None) -> ScoringRun:
    """`score_trials` plus per-channel counters of cohort-stat computations.

    Statistics for each distinct embedding (model or test) are computed once
    per channel and reused across every trial that touches it; the counters
    record exactly how many such computations ran.
    """
    check_channel_registry(channels)
    if not trials:
        return ScoringRun(records=[], stats_computations={c.name: 0 for c in channels})
    if threads is not None:
        _kernels.set_threads(threads)

    model_by_id: dict[str, SpeakerModel] = {}
    for m in models:
        if m.model_id in model_by_id:
            raise DataError(f"duplicate model id {m.model_id!r}")
        model_by_id[m.model_id] = m

    # Distinct ids in first-appearance order; order only affects caching layout.
    model_ids: list[str] = []
    test_ids: list[str] = []
    model_pos: dict[str, int] = {}
    test_pos: dict[str, int] = {}
    for t in trials:
        if t.model_id not in model_pos:
            if t.model_id not in model_by_id:
                raise DataError(f"trial references unknown model {t.model_id!r}")
            model_pos[t.model_id] = len(model_ids)
            model_ids.append(t.model_id)
        if t.test_utterance_id not in test_pos:
            test_pos[t.test_utterance_id] = len(test_ids)
            test_ids.append(t.test_utterance_id)

    n_trials = len(trials)
    trial_model_rows = np.array([model_pos[t.model_id] for t in trials], dtype=np.int64)
    trial_test_rows = np.array([test_pos[t.test_utterance_id] for t in trials], dtype=np.int64)

    top_k = opts.adaptive_top_k or 0
    n_channels = len(channels)
    raw_all = np.empty((n_channels, n_trials), dtype=np.float64)
    norm_all = np.empty((n_channels, n_trials), dtype=np.float64)
    stats_counts: dict[str, int] = {}

    for ci, spec in enumerate(channels):
        if spec.name not in tests:
            raise DataError(f"no test embeddings for channel {spec.name!r}")
        if spec.name not in cohorts:
            raise DataError(f"no cohort embeddings for channel {spec.name!r}")
        test_set = tests[spec.name]
        if test_set.dim != spec.dim:
            raise DataError(
                f"test embeddings for {spec.name!r} have dim {test_set.dim}, expected {spec.dim}"
            )

        model_matrix = np.empty((len(model_ids), spec.dim), dtype=np.float64)
        for i, mid in enumerate(model_ids):
            vec = model_by_id[mid].vector(spec.name)
            if vec.shape[0] != spec.dim:
                raise DataError(
                    f"model {mid!r} channel {spec.name!r}: dim {vec.shape[0]} != {spec.dim}"
                )
            model_matrix[i] = vec
        test_matrix = np.empty((len(test_ids), spec.dim), dtype=np.float64)
        for i, uid in enumerate(test_ids):
            test_matrix[i] = test_set.vectors[test_set.row(uid)]

        cohort_unit = _unit_rows(
            truncate_cohort(cohorts[spec.name], opts.cohort_limit), f"cohort[{spec.name}]"
        )
        model_unit = _unit_rows(model_matrix, f"models[{spec.name}]")
        test_unit = _unit_rows(test_matrix, f"tests[{spec.name}]")

        # One batched pass over all distinct embeddings = one stats computation each.
        probes = np.ascontiguousarray(np.vstack((model_unit, test_unit)))
        means, stds = _kernels.cohort_mean_std(cohort_unit, probes, top_k, opts.std_floor)
        stats_counts[spec.name] = probes.shape[0]
        m_mean, t_mean = means[: len(model_ids)], means[len(model_ids) :]
        m_std, t_std = stds[: len(model_ids)], stds[len(model_ids) :]

        raw = _kernels.rowwise_dot(
            np.ascontiguousarray(model_unit[trial_model_rows]),
            np.ascontiguousarray(test_unit[trial_test_rows]),
        )
        raw_all[ci] = raw
        norm_all[ci] = (raw - t_mean[trial_test_rows]) / t_std[trial_test_rows] + (
            raw - m_mean[trial_model_rows]
        ) / m_std[trial_model_rows]

    if n_trials == 1:
        cal_all = np.full((n_channels, 1), 0.5)
        if opts.calibration == "sigmoid":
            cal_all = _calibrate_array(norm_all, "sigmoid")
    else:
        cal_all = np.empty_like(norm_all)
        for ci in range(n_channels):
            cal_all[ci] = _calibrate_array(norm_all[ci], opts.calibration)

    if opts.fusion_weights is None:
        fused = cal_all.mean(axis=0)
    else:
        w = np.asarray(opts.fusion_weights, dtype=np.float64)
        if w.shape[0] != n_channels:
            raise DataError(f"{w.shape[0]} fusion weights for {n_channels} channels")
        if np.any(w < 0.0) or float(w.sum()) <= 0.0:
            raise DataError("fusion weights must be non-negative with positive sum")
        fused = (w[:, None] * cal_all).sum(axis=0) / float(w.sum())

    records: list[ScoreRecord] = []
    for i, t in enumerate(trials):
        model = model_by_id[t.model_id]
        posterior_row = phrase_posteriors.get(t.test_utterance_id)
        if posterior_row is None:
            raise DataError(
                f"no phrase posterior for test utterance {t.test_utterance_id!r}"
            )
        row = np.asarray(posterior_row, dtype=np.float64)
        if row.shape[0] < model.phrase_id:
            raise DataError(
                f"posterior row for {t.test_utterance_id!r} too short for "
                f"phrase id {model.phrase_id}"
            )
        phrase_prob = float(row[model.phrase_id - 1])
        if not (0.0 <= phrase_prob <= 1.0):
            raise DataError(
                f"posterior for {t.test_utterance_id!r} phrase {model.phrase_id} "
                f"is {phrase_prob}, outside [0, 1]"
            )
        fused_i = float(fused[i])
        records.append(
            ScoreRecord(
                model_id=t.model_id,
                test_utterance_id=t.test_utterance_id,
                raw=tuple(float(raw_all[ci, i]) for ci in range(n_channels)),
                normalized=tuple(float(norm_all[ci, i]) for ci in range(n_channels)),
                calibrated=tuple(float(cal_all[ci, i]) for ci in range(n_channels)),
                fused=fused_i,
                phrase_posterior=phrase_prob,
                final=fused_i * phrase_prob,
            ).validate()
        )
    return ScoringRun(records=records, stats_computations=stats_counts)
