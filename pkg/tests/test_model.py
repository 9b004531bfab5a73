import numpy as np
import pytest

from tdsv.model import (
    ChannelSpec,
    DataError,
    DEFAULT_CHANNELS,
    Embedding,
    EmbeddingSet,
    PHRASES,
    PHRASE_BY_ID,
    ScoreRecord,
    SpeakerModel,
    Trial,
    check_channel_registry,
)


def test_default_channels_match_extractor_configs():
    dims = {c.name: c.dim for c in DEFAULT_CHANNELS}
    assert dims == {"next_tdnn": 192, "resnet_tdnn": 256, "efficientnet_a0": 256}


def test_channel_registry_rejects_duplicates_and_bad_dims():
    with pytest.raises(DataError):
        ChannelSpec("x", 0)
    with pytest.raises(DataError):
        check_channel_registry((ChannelSpec("a", 4), ChannelSpec("a", 8)))
    with pytest.raises(DataError):
        check_channel_registry(())


def test_phrase_registry_is_complete_and_bijective():
    assert len(PHRASES) == 10
    assert sorted(p.id for p in PHRASES) == list(range(1, 11))
    texts = {p.text for p in PHRASES}
    assert len(texts) == 10
    for p in PHRASES:
        assert PHRASE_BY_ID[p.id] is p
        assert p.language == ("farsi" if p.id <= 5 else "english")
    assert PHRASE_BY_ID[6].text == "My voice is my password."
    assert PHRASE_BY_ID[7].text == "OK Google."


def test_embedding_validation():
    emb = Embedding("u1", "c", [1.0, 0.0, 0.0])
    assert emb.dim == 3
    with pytest.raises(DataError):
        Embedding("", "c", [1.0])
    with pytest.raises(DataError):
        Embedding("u 1", "c", [1.0])
    with pytest.raises(DataError):
        Embedding("u\t1", "c", [1.0])
    with pytest.raises(DataError):
        Embedding("u1", "c", [1.0, np.nan])
    with pytest.raises(DataError):
        Embedding("u1", "c", [1.0, np.inf])


def test_embedding_set_order_lookup_and_duplicates():
    es = EmbeddingSet("ch", 2)
    es.add("a", [1, 0])
    es.add("b", [0, 1])
    assert es.ids == ["a", "b"]
    assert len(es) == 2
    assert "a" in es and "z" not in es
    assert np.allclose(es.get("b").vector, [0, 1])
    assert es.vectors.shape == (2, 2)
    with pytest.raises(DataError):
        es.add("a", [1, 1])
    with pytest.raises(DataError):
        es.add("c", [1, 1, 1])
    with pytest.raises(DataError):
        es.get("missing")


def test_speaker_model_requires_three_sources_and_known_phrase():
    vec = np.ones(4)
    SpeakerModel("m1", 3, {"ch": vec}, ("u1", "u2", "u3"))
    with pytest.raises(DataError):
        SpeakerModel("m1", 3, {"ch": vec}, ("u1", "u2"))
    with pytest.raises(DataError):
        SpeakerModel("m1", 11, {"ch": vec}, ("u1", "u2", "u3"))
    model = SpeakerModel("m1", 3, {"ch": vec}, ("u1", "u2", "u3"))
    with pytest.raises(DataError):
        model.vector("other")


def test_trial_labels_and_metadata():
    t = Trial("spk01-ph03", "u99", "TC", "male", "farsi")
    assert t.is_target is True
    assert Trial("m", "u", "IC").is_target is False
    assert Trial("m", "u").is_target is None
    for bad in ("tc", "XX", "target"):
        with pytest.raises(DataError):
            Trial("m", "u", bad)
    with pytest.raises(DataError):
        Trial("m", "u", "TC", "m")
    with pytest.raises(DataError):
        Trial("m", "u", "TC", "male", "fa")


def test_score_record_invariants():
    rec = ScoreRecord("m", "u", (0.5,), (1.2,), (0.7,), 0.7, 0.5, 0.35)
    rec.validate()
    bad_product = ScoreRecord("m", "u", (0.5,), (1.2,), (0.7,), 0.7, 0.5, 0.36)
    with pytest.raises(DataError):
        bad_product.validate()
    bad_product.validate(check_product=False)
    with pytest.raises(DataError):
        ScoreRecord("m", "u", (0.5,), (1.2,), (1.7,), 0.7, 0.5, 0.35).validate()
    with pytest.raises(DataError):
        ScoreRecord("m", "u", (0.5,), (1.2,), (0.7,), -0.1, 0.5, 0.35).validate()
