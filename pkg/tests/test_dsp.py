import wave as wave_mod

import numpy as np
import pytest

from tdsv.dsp import (
    AugmentParams,
    StftParams,
    Waveform,
    add_noise,
    apply_freq_drop,
    freq_drop,
    istft,
    read_wav,
    reverb,
    rms,
    sample_time_drops,
    stft,
    time_drop,
    vad_trim,
    write_wav,
)
from tdsv.model import DataError, FormatError

SR = 16000


def tone(freq, seconds, amplitude=0.5, sr=SR):
    t = np.arange(int(seconds * sr)) / sr
    return amplitude * np.sin(2 * np.pi * freq * t)


# --- WAV I/O -----------------------------------------------------------------

def test_wav_scaling_rule(tmp_path):
    path = tmp_path / "x.wav"
    with wave_mod.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(SR)
        wf.writeframes(np.array([16384, -16384, 0], dtype="<i2").tobytes())
    w = read_wav(path)
    assert np.array_equal(w.samples, [0.5, -0.5, 0.0])


def test_wav_roundtrip_idempotent_after_quantization(tmp_path):
    rng = np.random.default_rng(50)
    raw = rng.uniform(-1, 1, 4000)
    p1, p2 = tmp_path / "a.wav", tmp_path / "b.wav"
    write_wav(Waveform(raw), p1)
    once = read_wav(p1)
    write_wav(once, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(once.samples, read_wav(p2).samples)


def test_wav_rejects_stereo_and_wrong_rate(tmp_path):
    stereo = tmp_path / "st.wav"
    with wave_mod.open(str(stereo), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(SR)
        wf.writeframes(np.zeros(64, dtype="<i2").tobytes())
    with pytest.raises(FormatError, match="mono"):
        read_wav(stereo)
    slow = tmp_path / "slow.wav"
    with wave_mod.open(str(slow), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(8000)
        wf.writeframes(np.zeros(64, dtype="<i2").tobytes())
    with pytest.raises(FormatError, match="Hz"):
        read_wav(slow)
    garbage = tmp_path / "g.wav"
    garbage.write_bytes(b"not a riff file")
    with pytest.raises(FormatError):
        read_wav(garbage)


# --- VAD trimming -------------------------------------------------------------

def oracle_trim_bounds(samples, frame, hop, threshold_db):
    """Independent frame walk: first/last frame above peak + threshold_db."""
    n_frames = 1 + (len(samples) - frame) // hop
    energies = [float(np.sum(samples[i * hop : i * hop + frame] ** 2))
                for i in range(n_frames)]
    peak = max(energies)
    cut = peak * 10.0 ** (threshold_db / 10.0)
    above = [i for i, e in enumerate(energies) if e > cut]
    end = len(samples) if above[-1] == n_frames - 1 else above[-1] * hop + frame
    return above[0] * hop, end


def test_vad_trims_flanking_silence():
    x = np.concatenate([np.zeros(SR), tone(440, 1.0, amplitude=1.0), np.zeros(SR)])
    out = vad_trim(Waveform(x))
    frame, hop = int(0.025 * SR), int(0.010 * SR)
    begin, end = oracle_trim_bounds(x, frame, hop, -30.0)
    assert len(out) == end - begin
    assert np.array_equal(out.samples, x[begin:end])
    # the kept span brackets the tone within one frame + one hop per side
    assert abs(len(out) - SR) <= frame + 2 * hop


def test_vad_no_silence_is_identity():
    x = tone(300, 0.5, amplitude=0.8)
    out = vad_trim(Waveform(x))
    assert np.array_equal(out.samples, x)


def test_vad_idempotent():
    x = np.concatenate([np.zeros(3200), tone(500, 0.4, amplitude=0.9), np.zeros(4800)])
    once = vad_trim(Waveform(x))
    twice = vad_trim(once)
    assert np.array_equal(once.samples, twice.samples)


def test_vad_errors():
    with pytest.raises(DataError, match="silent"):
        vad_trim(Waveform(np.zeros(SR)))
    with pytest.raises(DataError, match="shorter"):
        vad_trim(Waveform(np.ones(10)))


# --- noise injection ------------------------------------------------------------

def test_add_noise_gain_formula():
    rng = np.random.default_rng(51)
    x = Waveform(0.1 * np.sign(rng.standard_normal(SR)))  # rms exactly 0.1
    n = Waveform(0.1 * np.sign(rng.standard_normal(SR)))
    out = add_noise(x, n, 0.0)
    assert np.allclose(out.samples, x.samples + 1.0 * n.samples)
    out = add_noise(x, n, 10.0)
    g = 10.0 ** (-0.5)
    assert g == pytest.approx(0.316228, abs=1e-6)
    assert np.allclose(out.samples, x.samples + g * n.samples)


def test_add_noise_measured_snr():
    rng = np.random.default_rng(52)
    # amplitudes small enough that the mix never trips the clip guard
    x = Waveform(0.08 * rng.standard_normal(2 * SR))
    n = Waveform(0.02 * rng.standard_normal(2 * SR))
    for snr in (0.0, 7.3, 15.0):
        g = rms(x.samples) / (rms(n.samples) * 10 ** (snr / 20.0))
        measured = 20.0 * np.log10(rms(x.samples) / rms(g * n.samples))
        assert measured == pytest.approx(snr, abs=1e-6)
        out = add_noise(x, n, snr)
        assert np.allclose(out.samples, x.samples + g * n.samples)


def test_add_noise_loops_short_noise():
    x = Waveform(0.3 * np.ones(1000))
    n = Waveform(np.tile([0.1, -0.1], 50))  # 100 samples, looped to 1000
    out = add_noise(x, n, 20.0)
    assert len(out) == 1000


def test_add_noise_clip_guard_engages_iff_peak_exceeds_one():
    x = Waveform(0.9 * np.ones(100))
    n = Waveform(np.ones(100))
    out = add_noise(x, n, 0.0)  # gain 0.9 -> peak 1.8 -> rescaled
    assert np.max(np.abs(out.samples)) == pytest.approx(1.0)
    quiet = add_noise(Waveform(0.01 * np.ones(100)), n, 20.0)
    assert np.max(np.abs(quiet.samples)) < 1.0  # untouched, no rescale


def test_add_noise_zero_rms_errors():
    x = Waveform(np.ones(100) * 0.5)
    with pytest.raises(DataError):
        add_noise(Waveform(np.zeros(100) + 0.0), x, 10.0)
    with pytest.raises(DataError):
        add_noise(x, Waveform(np.zeros(100)), 10.0)


# --- reverberation ----------------------------------------------------------------

def naive_reverb(x, rir):
    """O(n*m) truncated convolution + rms rescale + whole-signal clip guard."""
    y = np.zeros(len(x))
    for i in range(len(x)):
        acc = 0.0
        for j in range(min(len(rir), i + 1)):
            acc += x[i - j] * rir[j]
        y[i] = acc
    y = y * (rms(x) / rms(y))
    peak = np.max(np.abs(y))
    return y / peak if peak > 1.0 else y


def test_reverb_unit_impulse_identity():
    x = tone(220, 0.3)
    rir = np.zeros(64)
    rir[0] = 1.0
    out = reverb(Waveform(x), Waveform(rir))
    assert np.allclose(out.samples, x, atol=1e-9)


def test_reverb_delayed_impulse_shifts():
    x = tone(220, 0.3)
    k = 37
    rir = np.zeros(64)
    rir[k] = 1.0
    out = reverb(Waveform(x), Waveform(rir))
    assert np.allclose(out.samples[:k], 0.0)
    shifted = x[: len(x) - k]
    scale = rms(x) / rms(np.concatenate([np.zeros(k), shifted]))
    assert np.allclose(out.samples[k:], shifted * scale, atol=1e-9)
    assert rms(out.samples) == pytest.approx(rms(x))


def test_reverb_matches_naive_convolution():
    rng = np.random.default_rng(53)
    x = rng.uniform(-0.5, 0.5, 1000)
    rir = rng.uniform(-0.3, 0.3, 50)
    out = reverb(Waveform(x), Waveform(rir))
    assert np.abs(out.samples - naive_reverb(x, rir)).max() < 1e-6


def test_reverb_rejects_bad_rir():
    x = Waveform(tone(220, 0.3))
    with pytest.raises(DataError, match="2 s"):
        reverb(x, Waveform(np.ones(2 * SR)))
    with pytest.raises(DataError, match="zero RMS"):
        reverb(x, Waveform(np.zeros(100)))


# --- STFT and frequency drop --------------------------------------------------------

def test_stft_roundtrip_identity():
    rng = np.random.default_rng(54)
    for n in (512, 1000, 5000, 16000):
        x = rng.uniform(-0.9, 0.9, n)
        back = istft(stft(x), n)
        err = rms(back - x)
        assert err < 1e-6, (n, err)


def test_apply_freq_drop_no_bands_is_reconstruction():
    x = tone(700, 0.5)
    out = apply_freq_drop(Waveform(x), [])
    assert rms(out.samples - x) < 1e-6


def band_energy(samples, lo_hz, hi_hz, sr=SR):
    spec = np.fft.rfft(samples)
    freqs = np.fft.rfftfreq(len(samples), 1.0 / sr)
    mask = (freqs >= lo_hz) & (freqs < hi_hz)
    return float(np.sum(np.abs(spec[mask]) ** 2))


def test_freq_drop_kills_tone_inside_band():
    params = StftParams()
    bin_hz = SR / params.n_fft  # 31.25 Hz
    x = tone(64 * bin_hz, 2.0, amplitude=0.6)  # 2000 Hz, centered on bin 64
    out = apply_freq_drop(Waveform(x), [(56, 73)], params)
    interior = slice(4096, len(x) - 4096)
    before = band_energy(x[interior], 56 * bin_hz, 73 * bin_hz)
    after = band_energy(out.samples[interior], 56 * bin_hz, 73 * bin_hz)
    assert after <= 1e-4 * before  # >= 99.99% band-energy attenuation
    assert rms(out.samples[interior]) < 0.01 * rms(x[interior])


def test_freq_drop_deterministic_per_seed():
    rng = np.random.default_rng(55)
    x = Waveform(rng.uniform(-0.5, 0.5, SR))
    params = AugmentParams()
    a = freq_drop(x, params, seed=77)
    b = freq_drop(x, params, seed=77)
    assert np.array_equal(a.samples, b.samples)
    c = freq_drop(x, params, seed=78)
    assert not np.array_equal(a.samples, c.samples)
    assert len(a) == len(x)


def test_freq_drop_too_short_input():
    with pytest.raises(DataError, match="shorter"):
        freq_drop(Waveform(np.ones(100)), AugmentParams(), seed=1)


# --- time drop -------------------------------------------------------------------

def test_time_drop_zeroes_exact_intervals():
    rng = np.random.default_rng(56)
    x = rng.uniform(0.01, 0.5, 4 * SR)  # strictly positive: zeros only via drops
    params = AugmentParams()
    out = time_drop(Waveform(x), params, seed=7)
    assert len(out) == len(x)
    zero = out.samples == 0.0
    assert np.array_equal(out.samples[~zero], x[~zero])
    runs = np.flatnonzero(np.diff(np.concatenate(([0], zero.astype(int), [0]))))
    starts, stops = runs[::2], runs[1::2]
    lengths = stops - starts
    assert 1 <= len(lengths)
    assert lengths.min() >= SR  # every maximal run >= the 1000 ms minimum
    assert int(zero.sum()) <= 5 * 2 * SR


def test_time_drop_total_duration_bounds():
    rng = np.random.default_rng(57)
    params = AugmentParams()
    for seed in range(10):
        x = rng.uniform(0.01, 0.5, 5 * SR)
        out = time_drop(Waveform(x), params, seed=seed)
        zeroed = int((out.samples == 0.0).sum())
        assert SR <= zeroed <= min(5 * 2 * SR, len(x))


def test_time_drop_deterministic_per_seed():
    x = Waveform(np.random.default_rng(58).uniform(0.01, 0.5, 3 * SR))
    params = AugmentParams()
    a = time_drop(x, params, seed=3)
    b = time_drop(x, params, seed=3)
    assert np.array_equal(a.samples, b.samples)


def test_time_drop_excise_mode_shortens():
    x = Waveform(np.random.default_rng(59).uniform(0.01, 0.5, 3 * SR))
    params = AugmentParams()
    zeroed = time_drop(x, params, seed=11, mode="zero")
    excised = time_drop(x, params, seed=11, mode="excise")
    n_zero = int((zeroed.samples == 0.0).sum())
    assert len(excised) == len(x) - n_zero


def test_time_drop_intervals_never_overlap():
    params = AugmentParams()
    for seed in range(20):
        rng = np.random.default_rng(seed)
        drops = sample_time_drops(params, rng, 10 * SR, SR)
        for (s1, e1), (s2, e2) in zip(drops, drops[1:]):
            assert e1 <= s2


def test_time_drop_rejects_short_input():
    with pytest.raises(DataError, match="exceed"):
        time_drop(Waveform(np.ones(SR)), AugmentParams(), seed=1)


def test_all_outputs_stay_in_range():
    rng = np.random.default_rng(60)
    x = Waveform(rng.uniform(-1, 1, 3 * SR))
    n = Waveform(rng.uniform(-1, 1, SR))
    rir = np.zeros(200)
    rir[0], rir[50], rir[120] = 1.0, 0.6, -0.4
    outs = [
        add_noise(x, n, 0.0),
        reverb(x, Waveform(rir)),
        freq_drop(x, AugmentParams(), seed=2),
        time_drop(x, AugmentParams(), seed=2),
        vad_trim(x),
    ]
    for out in outs:
        assert np.max(np.abs(out.samples)) <= 1.0 + 1e-12
        assert out.sample_rate == SR
