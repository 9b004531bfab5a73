import numpy as np
import pytest

from tdsv.model import ChannelSpec, DataError, Trial
from tdsv.sim import (
    SimConfig,
    gen_phrase_posteriors,
    gen_population,
    gen_trials,
    substream,
)

SMALL_CHANNELS = (ChannelSpec("cha", 12), ChannelSpec("chb", 16))


def small_config(**kw):
    base = dict(
        n_speakers=4,
        utterances_per_speaker_phrase=5,
        latent_dim=8,
        sigma_phrase=0.5,
        sigma_channel=0.3,
        seed=100,
        channels=SMALL_CHANNELS,
        n_phrases=3,
        cohort_size=10,
    )
    base.update(kw)
    return SimConfig(**base)


def test_substreams_are_stable_and_independent():
    a = substream(1, "x").standard_normal(4)
    b = substream(1, "x").standard_normal(4)
    c = substream(1, "y").standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_config_validation():
    with pytest.raises(DataError):
        small_config(utterances_per_speaker_phrase=3)
    with pytest.raises(DataError):
        small_config(latent_dim=100)  # exceeds the min channel dim
    with pytest.raises(DataError):
        small_config(n_phrases=11)
    with pytest.raises(DataError):
        small_config(classifier_accuracy=1.5)
    with pytest.raises(DataError):
        small_config(posterior_confidence=(0.9, 0.8))
    with pytest.raises(DataError):
        small_config(cohort_size=1)


def test_population_shapes_and_unit_norm():
    cfg = small_config()
    pop = gen_population(cfg)
    n_utts = cfg.n_speakers * cfg.n_phrases * cfg.utterances_per_speaker_phrase
    for spec in cfg.channels:
        es = pop.eval_embeddings[spec.name]
        assert len(es) == n_utts and es.dim == spec.dim
        norms = np.linalg.norm(es.vectors, axis=1)
        assert np.abs(norms - 1.0).max() < 1e-6
        coh = pop.cohort_embeddings[spec.name]
        assert len(coh) == cfg.cohort_size
        assert np.abs(np.linalg.norm(coh.vectors, axis=1) - 1.0).max() < 1e-6
    assert len(pop.ground_truth) == n_utts
    assert len(pop.enrollments) == cfg.n_speakers * cfg.n_phrases
    for model_id, phrase_id, utts in pop.enrollments:
        assert len(utts) == 3


def test_zero_channel_noise_collapses_repeats():
    cfg = small_config(sigma_channel=0.0)
    pop = gen_population(cfg)
    es = pop.eval_embeddings["cha"]
    first = es.get("spk0000-ph01-u000").vector
    for j in range(1, cfg.utterances_per_speaker_phrase):
        other = es.get(f"spk0000-ph01-u{j:03d}").vector
        assert np.array_equal(first, other)


def test_same_seed_is_bit_identical():
    cfg = small_config()
    a = gen_population(cfg)
    b = gen_population(cfg)
    for spec in cfg.channels:
        assert np.array_equal(
            a.eval_embeddings[spec.name].vectors, b.eval_embeddings[spec.name].vectors
        )
        assert np.array_equal(
            a.cohort_embeddings[spec.name].vectors, b.cohort_embeddings[spec.name].vectors
        )
    c = gen_population(small_config(seed=101))
    assert not np.array_equal(
        a.eval_embeddings["cha"].vectors, c.eval_embeddings["cha"].vectors
    )


def test_disable_speaker_factor_shares_one_latent():
    cfg = small_config(sigma_channel=0.0, disable_speaker_factor=True)
    pop = gen_population(cfg)
    es = pop.eval_embeddings["cha"]
    a = es.get("spk0000-ph01-u000").vector
    b = es.get("spk0003-ph01-u000").vector
    assert np.array_equal(a, b)  # same phrase, different speaker, no noise


def test_trials_two_speakers_one_phrase_restricts_types():
    cfg = small_config(n_speakers=2, n_phrases=1)
    pop = gen_population(cfg)
    trials = gen_trials(cfg, pop)
    types = {t.label for t in trials}
    assert types == {"TC", "IC"}


def test_trials_tc_consistency_with_ground_truth():
    cfg = small_config()
    pop = gen_population(cfg)
    truth = {uid: (spk, pid) for uid, spk, pid in pop.ground_truth}
    enroll_utts = {u for _mid, _pid, utts in pop.enrollments for u in utts}
    trials = gen_trials(cfg, pop)
    for t in trials:
        assert t.test_utterance_id not in enroll_utts
        spk, pid = truth[t.test_utterance_id]
        model_spk, model_ph = t.model_id.split("-ph")
        same_spk = spk == model_spk
        same_ph = pid == int(model_ph)
        expected = {
            (True, True): "TC",
            (True, False): "TW",
            (False, True): "IC",
            (False, False): "IW",
        }[(same_spk, same_ph)]
        assert t.label == expected


def test_trials_balance_counts_exactly():
    cfg = small_config(trials_per_type=2)
    pop = gen_population(cfg)
    trials = gen_trials(cfg, pop)
    n_models = cfg.n_speakers * cfg.n_phrases
    counts = {}
    for t in trials:
        counts[t.label] = counts.get(t.label, 0) + 1
    assert counts == {"TC": 2 * n_models, "TW": 2 * n_models,
                      "IC": 2 * n_models, "IW": 2 * n_models}


def test_trials_metadata_assignment():
    cfg = small_config()
    pop = gen_population(cfg)
    for t in gen_trials(cfg, pop):
        spk_index = int(t.model_id[3:7])
        assert t.gender == ("male" if spk_index % 2 == 0 else "female")
        phrase_id = int(t.model_id.split("-ph")[1])
        assert t.language == ("farsi" if phrase_id <= 5 else "english")


def test_trials_need_two_speakers():
    cfg = small_config(n_speakers=1)
    pop = gen_population(cfg)
    with pytest.raises(DataError, match="speakers"):
        gen_trials(cfg, pop)


def test_posteriors_forced_correct_case():
    cfg = small_config(classifier_accuracy=1.0, posterior_confidence=(0.9, 0.9))
    pop = gen_population(cfg)
    trials = gen_trials(cfg, pop)
    posteriors = gen_phrase_posteriors(cfg, trials, pop.ground_truth)
    truth = {uid: pid for uid, _spk, pid in pop.ground_truth}
    for uid, row in posteriors.items():
        assert row[truth[uid] - 1] == pytest.approx(0.9)
        others = np.delete(row, truth[uid] - 1)
        assert np.allclose(others, 0.1 / 9)
        assert abs(row.sum() - 1.0) < 1e-9


def test_posteriors_rows_sum_to_one():
    cfg = small_config()
    pop = gen_population(cfg)
    trials = gen_trials(cfg, pop)
    posteriors = gen_phrase_posteriors(cfg, trials, pop.ground_truth)
    assert len(posteriors) == len({t.test_utterance_id for t in trials})
    for row in posteriors.values():
        assert abs(row.sum() - 1.0) < 1e-9


def test_posteriors_unknown_utterance_errors():
    cfg = small_config()
    pop = gen_population(cfg)
    with pytest.raises(DataError, match="ghost"):
        gen_phrase_posteriors(cfg, [Trial("m", "ghost", "TC")], pop.ground_truth)


def test_posteriors_empirical_accuracy():
    """Over 10,000 utterances the realized correct-prediction rate lands
    within a binomial tolerance of the configured accuracy."""
    cfg = SimConfig(n_speakers=2, utterances_per_speaker_phrase=4, latent_dim=4,
                    seed=500, channels=SMALL_CHANNELS, classifier_accuracy=0.95,
                    cohort_size=2)
    ground_truth = [(f"u{i:05d}", "spk0000", 1 + i % 10) for i in range(10000)]
    trials = [Trial("m", uid, "TC") for uid, _s, _p in ground_truth]
    posteriors = gen_phrase_posteriors(cfg, trials, ground_truth)
    truth = dict((uid, pid) for uid, _s, pid in ground_truth)
    correct = sum(
        1 for uid, row in posteriors.items() if int(np.argmax(row)) + 1 == truth[uid]
    )
    assert abs(correct / 10000 - 0.95) < 0.01
