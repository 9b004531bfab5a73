"""Domain types and registries for text-dependent speaker verification scoring.

Everything downstream (scoring, metrics, simulation, CLI) is built on the
value types defined here: embedding channels, the passphrase registry,
trials, enrolled speaker models, and per-trial score records.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np


class TdsvError(Exception):
    """Base class for all toolkit errors."""


class FormatError(TdsvError):
    """Malformed file contents or schema violation."""


class DataError(TdsvError):
    """Values that violate a domain invariant or contract."""


class ConfigError(TdsvError):
    """Invalid configuration value or usage."""


LABELS = ("TC", "TW", "IC", "IW")
TARGET_LABEL = "TC"
GENDERS = ("male", "female")
LANGUAGES = ("farsi", "english")


@dataclass(frozen=True)
class ChannelSpec:
    """One embedding extractor channel: a name and its vector dimension."""

    name: str
    dim: int

    def __post_init__(self):
        if not self.name or any(c.isspace() for c in self.name):
            raise DataError(f"invalid channel name {self.name!r}")
        if self.dim <= 0:
            raise DataError(f"channel {self.name!r}: dim must be positive, got {self.dim}")


DEFAULT_CHANNELS = (
    ChannelSpec("next_tdnn", 192),
    ChannelSpec("resnet_tdnn", 256),
    ChannelSpec("efficientnet_a0", 256),
)


def check_channel_registry(channels: Sequence[ChannelSpec]) -> Sequence[ChannelSpec]:
    """Validate a channel registry: non-empty with unique names."""
    if not channels:
        raise DataError("channel registry is empty")
    names = [c.name for c in channels]
    if len(set(names)) != len(names):
        raise DataError(f"duplicate channel names in registry: {names}")
    return channels


@dataclass(frozen=True)
class Phrase:
    id: int
    text: str
    language: str


# The ten fixed passphrases; ids 1-5 are Farsi, 6-10 English.
PHRASES = (
    Phrase(1, "sedaye man neshandahandeye hoviyyate man ast.", "farsi"),
    Phrase(2, "sedaye har kas monhaser be fard ast.", "farsi"),
    Phrase(3, "hoviyyate man ra ba sedaye man tayid kon.", "farsi"),
    Phrase(4, "sedaye man ramze obure man ast.", "farsi"),
    Phrase(5, "baniadam azaye yekdigarand.", "farsi"),
    Phrase(6, "My voice is my password.", "english"),
    Phrase(7, "OK Google.", "english"),
    Phrase(8, "Artificial intelligence is for real.", "english"),
    Phrase(9, "Actions speak louder than words.", "english"),
    Phrase(10, "There is no such thing as a free lunch.", "english"),
)

PHRASE_BY_ID = {p.id: p for p in PHRASES}
N_PHRASES = len(PHRASES)


def check_utterance_id(utterance_id: str) -> str:
    if not utterance_id or any(c.isspace() for c in utterance_id):
        raise DataError(f"invalid utterance id {utterance_id!r}: must be non-empty without whitespace")
    return utterance_id


@dataclass(frozen=True, eq=False)
class Embedding:
    """A fixed-dimension real vector tagged with its utterance and channel."""

    utterance_id: str
    channel: str
    vector: np.ndarray

    def __post_init__(self):
        check_utterance_id(self.utterance_id)
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.ndim != 1 or vec.size == 0:
            raise DataError(f"embedding {self.utterance_id!r}: vector must be 1-D and non-empty")
        if not np.all(np.isfinite(vec)):
            raise DataError(f"embedding {self.utterance_id!r}: non-finite component")
        object.__setattr__(self, "vector", vec)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


class EmbeddingSet:
    """Ordered collection of embeddings from one channel, with O(1) id lookup.

    Order is the insertion (file) order; it matters because cohort truncation
    takes the first N entries. Duplicate utterance ids are rejected.
    """

    def __init__(self, channel: str, dim: int):
        if dim <= 0:
            raise DataError(f"EmbeddingSet: dim must be positive, got {dim}")
        self.channel = channel
        self.dim = dim
        self._ids: list[str] = []
        self._index: dict[str, int] = {}
        self._rows: list[np.ndarray] = []
        self._matrix: np.ndarray | None = None

    @classmethod
    def from_arrays(cls, channel: str, ids: Sequence[str], vectors: np.ndarray) -> "EmbeddingSet":
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(ids):
            raise DataError("from_arrays: vectors must be (len(ids), dim)")
        es = cls(channel, vectors.shape[1])
        for i, uid in enumerate(ids):
            es.add(uid, vectors[i])
        return es

    def add(self, utterance_id: str, vector: np.ndarray) -> None:
        check_utterance_id(utterance_id)
        vec = np.asarray(vector, dtype=np.float64).reshape(-1)
        if vec.shape[0] != self.dim:
            raise DataError(
                f"embedding {utterance_id!r}: dim {vec.shape[0]} != channel dim {self.dim}"
            )
        if not np.all(np.isfinite(vec)):
            raise DataError(f"embedding {utterance_id!r}: non-finite component")
        if utterance_id in self._index:
            raise DataError(f"duplicate embedding for ({utterance_id!r}, {self.channel!r})")
        self._index[utterance_id] = len(self._ids)
        self._ids.append(utterance_id)
        self._rows.append(vec)
        self._matrix = None

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    @property
    def vectors(self) -> np.ndarray:
        """All vectors stacked as an (N, dim) float64 matrix in insertion order."""
        if self._matrix is None:
            if self._rows:
                self._matrix = np.ascontiguousarray(np.vstack(self._rows))
            else:
                self._matrix = np.empty((0, self.dim), dtype=np.float64)
        return self._matrix

    def row(self, utterance_id: str) -> int:
        try:
            return self._index[utterance_id]
        except KeyError:
            raise DataError(
                f"utterance {utterance_id!r} not found in channel {self.channel!r}"
            ) from None

    def get(self, utterance_id: str) -> Embedding:
        return Embedding(utterance_id, self.channel, self._rows[self.row(utterance_id)])

    def __contains__(self, utterance_id: str) -> bool:
        return utterance_id in self._index

    def __len__(self) -> int:
        return len(self._ids)

    def __iter__(self) -> Iterator[Embedding]:
        for uid, row in zip(self._ids, self._rows):
            yield Embedding(uid, self.channel, row)


@dataclass(frozen=True)
class Trial:
    """One verification attempt: an enrolled model against a test utterance.

    `label` is one of TC/TW/IC/IW or None for blind trials; TC is the only
    target class. Gender and language are optional subset metadata.
    """

    model_id: str
    test_utterance_id: str
    label: str | None = None
    gender: str | None = None
    language: str | None = None

    def __post_init__(self):
        if not self.model_id or any(c.isspace() for c in self.model_id):
            raise DataError(f"invalid model id {self.model_id!r}")
        check_utterance_id(self.test_utterance_id)
        if self.label is not None and self.label not in LABELS:
            raise DataError(f"unknown trial label {self.label!r}")
        if self.gender is not None and self.gender not in GENDERS:
            raise DataError(f"unknown gender {self.gender!r}")
        if self.language is not None and self.language not in LANGUAGES:
            raise DataError(f"unknown language {self.language!r}")

    @property
    def is_target(self) -> bool | None:
        if self.label is None:
            return None
        return self.label == TARGET_LABEL


@dataclass(frozen=True)
class SpeakerModel:
    """An enrolled speaker x phrase model: one unit-norm embedding per channel."""

    model_id: str
    phrase_id: int
    embeddings: dict[str, np.ndarray] = field(default_factory=dict)
    source_utterance_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.model_id or any(c.isspace() for c in self.model_id):
            raise DataError(f"invalid model id {self.model_id!r}")
        if self.phrase_id not in PHRASE_BY_ID:
            raise DataError(f"model {self.model_id!r}: unknown phrase id {self.phrase_id}")
        if len(self.source_utterance_ids) != 3:
            raise DataError(
                f"model {self.model_id!r}: exactly 3 enrollment utterances required, "
                f"got {len(self.source_utterance_ids)}"
            )

    def vector(self, channel: str) -> np.ndarray:
        try:
            return self.embeddings[channel]
        except KeyError:
            raise DataError(
                f"model {self.model_id!r} has no embedding for channel {channel!r}"
            ) from None


@dataclass(frozen=True)
class ScoreRecord:
    """Per-trial score ledger: raw -> normalized -> calibrated -> fused -> final.

    Tuples hold one value per channel in registry order. Freshly scored
    records satisfy final == fused * phrase_posterior exactly; records read
    back from a 6-decimal score file carry rounding and are validated with
    the product check off.
    """

    model_id: str
    test_utterance_id: str
    raw: tuple[float, ...]
    normalized: tuple[float, ...]
    calibrated: tuple[float, ...]
    fused: float
    phrase_posterior: float
    final: float

    def validate(self, check_product: bool = True) -> "ScoreRecord":
        for name, vals in (("calibrated", self.calibrated),):
            for v in vals:
                if not (0.0 <= v <= 1.0):
                    raise DataError(f"{name} score {v} outside [0, 1]")
        for name, v in (
            ("fused", self.fused),
            ("phrase_posterior", self.phrase_posterior),
            ("final", self.final),
        ):
            if not (0.0 <= v <= 1.0):
                raise DataError(f"{name} score {v} outside [0, 1]")
        if len(self.raw) != len(self.normalized) or len(self.raw) != len(self.calibrated):
            raise DataError("per-channel score tuples have mismatched lengths")
        if check_product and abs(self.final - self.fused * self.phrase_posterior) > 1e-12:
            raise DataError(
                f"final {self.final} != fused*posterior "
                f"{self.fused * self.phrase_posterior} beyond 1e-12"
            )
        return self
