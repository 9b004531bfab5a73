"""Synthetic embedding generator with known ground truth.

Stands in for the neural extractors and phrase classifier: utterance
embeddings come from a latent speaker/phrase factor model projected into
each channel's space, trials are emitted with exact 4-way labels, and
phrase posteriors follow a configurable-accuracy classifier model. All
randomness is drawn from per-entity substreams keyed by stable hashes, so
output is independent of generation order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import (
    ChannelSpec,
    DataError,
    DEFAULT_CHANNELS,
    EmbeddingSet,
    N_PHRASES,
    PHRASE_BY_ID,
    Trial,
    check_channel_registry,
)

TRIAL_TYPES = ("TC", "TW", "IC", "IW")


def substream(seed: int, *tags) -> np.random.Generator:
    """Independent RNG stream keyed by (seed, tags) through SHA-256."""
    text = ":".join(str(t) for t in (seed,) + tags)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


@dataclass(frozen=True)
class SimConfig:
    n_speakers: int = 50
    utterances_per_speaker_phrase: int = 6
    latent_dim: int = 64
    sigma_phrase: float = 0.5
    sigma_channel: float = 0.3
    classifier_accuracy: float = 0.95
    posterior_confidence: tuple[float, float] = (0.7, 0.99)
    seed: int = 0
    channels: tuple[ChannelSpec, ...] = DEFAULT_CHANNELS
    n_phrases: int = N_PHRASES
    trials_per_type: int | None = None
    cohort_size: int = 1000
    disable_speaker_factor: bool = False

    def __post_init__(self):
        check_channel_registry(self.channels)
        if self.n_speakers < 1:
            raise DataError("n_speakers must be positive")
        if self.utterances_per_speaker_phrase < 4:
            raise DataError(
                "utterances_per_speaker_phrase must be >= 4 (3 enrollment + tests)"
            )
        if self.latent_dim < 1 or self.latent_dim > min(c.dim for c in self.channels):
            raise DataError(
                f"latent_dim {self.latent_dim} must lie in [1, min channel dim]"
            )
        if self.sigma_phrase < 0.0 or self.sigma_channel < 0.0:
            raise DataError("sigma_phrase and sigma_channel must be non-negative")
        if not (0.0 <= self.classifier_accuracy <= 1.0):
            raise DataError("classifier_accuracy must lie in [0, 1]")
        lo, hi = self.posterior_confidence
        if not (0.0 < lo <= hi < 1.0):
            raise DataError(f"bad posterior confidence range [{lo}, {hi}]")
        if not (1 <= self.n_phrases <= N_PHRASES):
            raise DataError(f"n_phrases must lie in [1, {N_PHRASES}]")
        if self.trials_per_type is not None and self.trials_per_type < 1:
            raise DataError("trials_per_type must be positive when given")
        if self.cohort_size < 2:
            raise DataError("cohort_size must be >= 2")


def speaker_id(index: int) -> str:
    return f"spk{index:04d}"


def speaker_gender(index: int) -> str:
    # Speakers alternate gender deterministically for exact subset sizes.
    return "male" if index % 2 == 0 else "female"


def model_id_for(spk_index: int, phrase_id: int) -> str:
    return f"{speaker_id(spk_index)}-ph{phrase_id:02d}"


def utterance_id_for(spk_index: int, phrase_id: int, utt_index: int) -> str:
    return f"{speaker_id(spk_index)}-ph{phrase_id:02d}-u{utt_index:03d}"


@dataclass
class Population:
    """Everything gen_population emits: per-channel eval and cohort embedding
    sets, the (utterance, speaker, phrase) ground truth, and the enrollment
    table (model id -> phrase + 3 reserved utterances)."""

    eval_embeddings: dict[str, EmbeddingSet]
    cohort_embeddings: dict[str, EmbeddingSet]
    ground_truth: list[tuple[str, str, int]]
    enrollments: list[tuple[str, int, tuple[str, str, str]]]
    test_utterances: dict[tuple[int, int], list[str]] = field(default_factory=dict)


def _unit(v: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise DataError("generated embedding has zero norm")
    return v / norm


def gen_population(config: SimConfig) -> Population:
    """Generate eval and cohort embeddings for every channel.

    Each utterance embedding is the unit-normalized channel projection of
    speaker + sigma_phrase * phrase + sigma_channel * noise, with the noise
    fresh per (utterance, channel). With `disable_speaker_factor` every
    speaker shares one latent, leaving phrase and noise as the only signal.
    """
    seed = config.seed
    dim_latent = config.latent_dim

    def speaker_latent(tag) -> np.ndarray:
        if config.disable_speaker_factor:
            return substream(seed, "z", "common").standard_normal(dim_latent)
        return substream(seed, "z", tag).standard_normal(dim_latent)

    phrase_latents = {
        pid: substream(seed, "q", pid).standard_normal(dim_latent)
        for pid in range(1, N_PHRASES + 1)
    }
    projections = {
        spec.name: substream(seed, "proj", spec.name).standard_normal(
            (spec.dim, dim_latent)
        )
        for spec in config.channels
    }

    eval_sets = {s.name: EmbeddingSet(s.name, s.dim) for s in config.channels}
    cohort_sets = {s.name: EmbeddingSet(s.name, s.dim) for s in config.channels}
    ground_truth: list[tuple[str, str, int]] = []
    enrollments: list[tuple[str, int, tuple[str, str, str]]] = []
    test_utterances: dict[tuple[int, int], list[str]] = {}

    for spk in range(config.n_speakers):
        z = speaker_latent(spk)
        for pid in range(1, config.n_phrases + 1):
            base = z + config.sigma_phrase * phrase_latents[pid]
            utts = []
            for j in range(config.utterances_per_speaker_phrase):
                uid = utterance_id_for(spk, pid, j)
                utts.append(uid)
                ground_truth.append((uid, speaker_id(spk), pid))
                for spec in config.channels:
                    eps = substream(seed, "eps", uid, spec.name).standard_normal(dim_latent)
                    latent = base + config.sigma_channel * eps
                    eval_sets[spec.name].add(uid, _unit(projections[spec.name] @ latent))
            enrollments.append((model_id_for(spk, pid), pid, tuple(utts[:3])))
            test_utterances[(spk, pid)] = utts[3:]

    for i in range(config.cohort_size):
        uid = f"coh{i:05d}"
        meta = substream(seed, "cohmeta", i)
        pid = int(meta.integers(1, N_PHRASES + 1))
        z = (
            substream(seed, "z", "common").standard_normal(dim_latent)
            if config.disable_speaker_factor
            else substream(seed, "z", "coh", i).standard_normal(dim_latent)
        )
        base = z + config.sigma_phrase * phrase_latents[pid]
        for spec in config.channels:
            eps = substream(seed, "eps", uid, spec.name).standard_normal(dim_latent)
            latent = base + config.sigma_channel * eps
            cohort_sets[spec.name].add(uid, _unit(projections[spec.name] @ latent))

    return Population(eval_sets, cohort_sets, ground_truth, enrollments, test_utterances)


def gen_trials(config: SimConfig, population: Population) -> list[Trial]:
    """Emit labeled trials of all four types for every enrolled model.

    Per model and type, min(trials_per_type, available) distinct test
    utterances are drawn without replacement; enrollment utterances never
    appear as tests. Gender/language metadata come from the model's speaker
    parity and phrase registry language.
    """
    if config.n_speakers < 2:
        raise DataError("need at least 2 speakers for imposter trials")
    per_type = config.trials_per_type or (config.utterances_per_speaker_phrase - 3)
    trials: list[Trial] = []
    speakers = range(config.n_speakers)
    phrases = range(1, config.n_phrases + 1)
    for spk in speakers:
        for pid in phrases:
            mid = model_id_for(spk, pid)
            gender = speaker_gender(spk)
            language = PHRASE_BY_ID[pid].language
            pools = {
                "TC": population.test_utterances[(spk, pid)],
                "TW": [u for p2 in phrases if p2 != pid
                       for u in population.test_utterances[(spk, p2)]],
                "IC": [u for s2 in speakers if s2 != spk
                       for u in population.test_utterances[(s2, pid)]],
                "IW": [u for s2 in speakers if s2 != spk
                       for p2 in phrases if p2 != pid
                       for u in population.test_utterances[(s2, p2)]],
            }
            for ttype in TRIAL_TYPES:
                pool = pools[ttype]
                count = min(per_type, len(pool))
                if count == 0:
                    continue
                rng = substream(config.seed, "trials", mid, ttype)
                chosen = sorted(
                    rng.choice(len(pool), size=count, replace=False).tolist()
                )
                for idx in chosen:
                    trials.append(Trial(mid, pool[idx], ttype, gender, language))
    return trials


def gen_phrase_posteriors(config: SimConfig, trials: Sequence[Trial],
                          ground_truth: Sequence[tuple[str, str, int]]
                          ) -> dict[str, np.ndarray]:
    """Simulated classifier posteriors for every test utterance in the trials.

    With probability classifier_accuracy the predicted phrase is the true
    one, otherwise uniform among the other 9; the prediction receives a
    confidence drawn from posterior_confidence and the rest is spread evenly.
    """
    true_phrase = {uid: pid for uid, _spk, pid in ground_truth}
    lo, hi = config.posterior_confidence
    posteriors: dict[str, np.ndarray] = {}
    for t in trials:
        uid = t.test_utterance_id
        if uid in posteriors:
            continue
        if uid not in true_phrase:
            raise DataError(f"no ground-truth phrase for utterance {uid!r}")
        rng = substream(config.seed, "post", uid)
        truth = true_phrase[uid]
        if rng.random() < config.classifier_accuracy:
            predicted = truth
        else:
            others = [p for p in range(1, N_PHRASES + 1) if p != truth]
            predicted = others[int(rng.integers(0, len(others)))]
        confidence = float(rng.uniform(lo, hi))
        row = np.full(N_PHRASES, (1.0 - confidence) / (N_PHRASES - 1))
        row[predicted - 1] = confidence
        posteriors[uid] = row
    return posteriors
