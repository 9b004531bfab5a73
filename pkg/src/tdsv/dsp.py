"""Waveform utilities: PCM16 WAV I/O, energy-based silence trimming, and the
four waveform augmentations (noise injection, reverberation, frequency-band
drop, temporal drop).

All operations work on float64 samples in [-1, 1] at 16 kHz and are pure
functions of (input, parameters, seed). Operations that can push the peak
above full scale rescale the whole signal instead of clipping per sample.
"""

from __future__ import annotations

import wave as _wave
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .model import DataError, FormatError

SAMPLE_RATE = 16000


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise DataError("waveform must be 1-D and non-empty")
        if not np.all(np.isfinite(arr)):
            raise DataError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise DataError(f"bad sample rate {self.sample_rate}")
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class StftParams:
    n_fft: int = 512
    hop_length: int = 160
    win_length: int = 400

    def __post_init__(self):
        if min(self.n_fft, self.hop_length, self.win_length) <= 0:
            raise DataError("stft parameters must be positive")
        if self.win_length > self.n_fft:
            raise DataError("win_length must not exceed n_fft")


@dataclass(frozen=True)
class AugmentParams:
    snr_db: tuple[float, float] = (0.0, 15.0)
    n_freq_bands: tuple[int, int] = (1, 3)
    freq_band_width_bins: tuple[int, int] = (2, 16)
    time_drop_len_ms: tuple[float, float] = (1000.0, 2000.0)
    n_time_drops: tuple[int, int] = (1, 5)
    stft: StftParams = field(default_factory=StftParams)

    def __post_init__(self):
        for name in ("snr_db", "n_freq_bands", "freq_band_width_bins",
                     "time_drop_len_ms", "n_time_drops"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise DataError(f"{name}: empty range [{lo}, {hi}]")


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(np.asarray(x, dtype=np.float64)))))


def _clip_guard(samples: np.ndarray) -> np.ndarray:
    peak = float(np.max(np.abs(samples)))
    if peak > 1.0:
        samples = samples / peak
    return samples


# ---------------------------------------------------------------------------
# WAV I/O (PCM16 mono 16 kHz only; no resampling)
# ---------------------------------------------------------------------------

def read_wav(path) -> Waveform:
    try:
        with _wave.open(str(path), "rb") as wf:
            if wf.getcomptype() != "NONE":
                raise FormatError(f"{path}: compressed WAV not supported")
            if wf.getnchannels() != 1:
                raise FormatError(f"{path}: expected mono, got {wf.getnchannels()} channels")
            if wf.getsampwidth() != 2:
                raise FormatError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
            if wf.getframerate() != SAMPLE_RATE:
                raise FormatError(
                    f"{path}: expected {SAMPLE_RATE} Hz, got {wf.getframerate()} Hz"
                )
            raw = wf.readframes(wf.getnframes())
    except _wave.Error as exc:
        raise FormatError(f"{path}: not a RIFF/WAVE file ({exc})") from None
    ints = np.frombuffer(raw, dtype="<i2")
    if ints.size == 0:
        raise FormatError(f"{path}: empty WAV")
    return Waveform(ints.astype(np.float64) / 32768.0)


def write_wav(waveform: Waveform, path) -> None:
    # Round-half-even quantization, clamped to the int16 range.
    ints = np.clip(np.rint(waveform.samples * 32768.0), -32768, 32767).astype("<i2")
    with _wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(waveform.sample_rate)
        wf.writeframes(ints.tobytes())


# ---------------------------------------------------------------------------
# Voice activity trimming
# ---------------------------------------------------------------------------

def vad_trim(x: Waveform, frame_ms: float = 25.0, hop_ms: float = 10.0,
             threshold_db: float = -30.0) -> Waveform:
    """Trim leading and trailing low-energy frames.

    Frames of `frame_ms` on a `hop_ms` grid are kept if their energy exceeds
    the peak frame energy by more than `threshold_db` (a negative offset);
    the output spans the first through last kept frame. Interior frames are
    never removed.
    """
    frame = int(round(frame_ms * x.sample_rate / 1000.0))
    hop = int(round(hop_ms * x.sample_rate / 1000.0))
    if frame <= 0 or hop <= 0:
        raise DataError("frame and hop must be positive")
    n = len(x)
    if n < frame:
        raise DataError(f"signal of {n} samples is shorter than one {frame}-sample frame")
    n_frames = 1 + (n - frame) // hop
    sq = np.square(x.samples)
    csum = np.concatenate(([0.0], np.cumsum(sq)))
    starts = np.arange(n_frames) * hop
    energy = csum[starts + frame] - csum[starts]
    peak = float(energy.max())
    if peak <= 0.0:
        raise DataError("all-silent signal: no frame above threshold")
    keep = energy > peak * (10.0 ** (threshold_db / 10.0))
    kept = np.flatnonzero(keep)
    first, last = int(kept[0]), int(kept[-1])
    begin = first * hop
    # A tail too short for its own frame is unclassifiable; keep it whenever
    # the final frame is speech so silence-free input is a fixpoint.
    end = n if last == n_frames - 1 else last * hop + frame
    return Waveform(x.samples[begin:end], x.sample_rate)


# ---------------------------------------------------------------------------
# Noise injection and reverberation
# ---------------------------------------------------------------------------

def _fit_noise(noise: np.ndarray, length: int) -> np.ndarray:
    if noise.shape[0] >= length:
        return noise[:length]
    reps = -(-length // noise.shape[0])
    return np.tile(noise, reps)[:length]


def add_noise(x: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    """Mix noise into the signal at the requested SNR.

    The noise is cropped or looped to the signal length; gain is set from
    the RMS ratio so the realized SNR matches the request exactly before
    the clip guard.
    """
    if x.sample_rate != noise.sample_rate:
        raise DataError(
            f"sample-rate mismatch: {x.sample_rate} vs {noise.sample_rate}"
        )
    segment = _fit_noise(noise.samples, len(x))
    rms_x = rms(x.samples)
    rms_n = rms(segment)
    if rms_x == 0.0:
        raise DataError("add_noise: signal has zero RMS")
    if rms_n == 0.0:
        raise DataError("add_noise: noise has zero RMS")
    gain = rms_x / (rms_n * 10.0 ** (snr_db / 20.0))
    return Waveform(_clip_guard(x.samples + gain * segment), x.sample_rate)


def reverb(x: Waveform, rir: Waveform) -> Waveform:
    """Convolve with a room impulse response, truncated to the input length
    and rescaled back to the input RMS."""
    if x.sample_rate != rir.sample_rate:
        raise DataError(f"sample-rate mismatch: {x.sample_rate} vs {rir.sample_rate}")
    if len(rir) >= 2 * rir.sample_rate:
        raise DataError(f"impulse response of {len(rir)} samples is 2 s or longer")
    if rms(rir.samples) == 0.0:
        raise DataError("reverb: impulse response has zero RMS")
    wet = fftconvolve(x.samples, rir.samples, mode="full")[: len(x)]
    rms_wet = rms(wet)
    if rms_wet == 0.0:
        raise DataError("reverb: convolved signal has zero RMS")
    wet = wet * (rms(x.samples) / rms_wet)
    return Waveform(_clip_guard(wet), x.sample_rate)


# ---------------------------------------------------------------------------
# STFT and the spectral / temporal drops
# ---------------------------------------------------------------------------

def _hann_periodic(length: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


def stft(samples: np.ndarray, params: StftParams = StftParams()) -> np.ndarray:
    """Windowed STFT with internal edge padding; invert with `istft`."""
    samples = np.asarray(samples, dtype=np.float64)
    pad = params.n_fft
    n_frames = 1 + (pad + samples.shape[0] + pad - params.win_length) // params.hop_length
    padded = np.zeros(pad + samples.shape[0] + pad + params.win_length)
    padded[pad : pad + samples.shape[0]] = samples
    window = _hann_periodic(params.win_length)
    frames = np.lib.stride_tricks.sliding_window_view(padded, params.win_length)[
        :: params.hop_length
    ][:n_frames]
    return np.fft.rfft(frames * window, n=params.n_fft, axis=1)


def istft(spec: np.ndarray, length: int, params: StftParams = StftParams()) -> np.ndarray:
    """Weighted overlap-add inverse of `stft`, truncated to `length` samples."""
    window = _hann_periodic(params.win_length)
    frames = np.fft.irfft(spec, n=params.n_fft, axis=1)[:, : params.win_length]
    frames = frames * window
    total = (spec.shape[0] - 1) * params.hop_length + params.win_length
    acc = np.zeros(total)
    wsum = np.zeros(total)
    wsq = np.square(window)
    for m in range(spec.shape[0]):
        start = m * params.hop_length
        acc[start : start + params.win_length] += frames[m]
        wsum[start : start + params.win_length] += wsq
    out = acc / np.maximum(wsum, np.finfo(np.float64).tiny)
    pad = params.n_fft
    return out[pad : pad + length]


def apply_freq_drop(x: Waveform, bands: list[tuple[int, int]],
                    params: StftParams = StftParams()) -> Waveform:
    """Zero the given [start, stop) rfft bin ranges across all frames."""
    if len(x) < params.n_fft:
        raise DataError(f"signal of {len(x)} samples shorter than n_fft {params.n_fft}")
    spec = stft(x.samples, params)
    n_bins = spec.shape[1]
    for start, stop in bands:
        if not (0 <= start < stop <= n_bins):
            raise DataError(f"band [{start}, {stop}) outside [0, {n_bins})")
        spec[:, start:stop] = 0.0
    return Waveform(_clip_guard(istft(spec, len(x), params)), x.sample_rate)


def sample_freq_bands(params: AugmentParams, rng: np.random.Generator,
                      n_bins: int) -> list[tuple[int, int]]:
    n_bands = int(rng.integers(params.n_freq_bands[0], params.n_freq_bands[1] + 1))
    bands = []
    for _ in range(n_bands):
        width = int(rng.integers(params.freq_band_width_bins[0],
                                 params.freq_band_width_bins[1] + 1))
        width = min(width, n_bins)
        start = int(rng.integers(0, n_bins - width + 1))
        bands.append((start, start + width))
    return bands


def freq_drop(x: Waveform, params: AugmentParams, seed: int) -> Waveform:
    """Zero 1-3 random contiguous frequency-bin bands; deterministic per seed."""
    rng = np.random.default_rng(seed)
    n_bins = params.stft.n_fft // 2 + 1
    return apply_freq_drop(x, sample_freq_bands(params, rng, n_bins), params.stft)


def sample_time_drops(params: AugmentParams, rng: np.random.Generator,
                      n_samples: int, sample_rate: int,
                      unit: str = "ms") -> list[tuple[int, int]]:
    """Non-overlapping random [start, stop) intervals; each interval gets up
    to 100 placement attempts, after which it is skipped (accept fewer)."""
    if unit == "ms":
        lo = int(round(params.time_drop_len_ms[0] * sample_rate / 1000.0))
        hi = int(round(params.time_drop_len_ms[1] * sample_rate / 1000.0))
    elif unit == "samples":
        lo, hi = int(params.time_drop_len_ms[0]), int(params.time_drop_len_ms[1])
    else:
        raise DataError(f"unknown time-drop unit {unit!r}")
    if n_samples <= hi:
        raise DataError(
            f"signal of {n_samples} samples must exceed the maximum drop length {hi}"
        )
    n_drops = int(rng.integers(params.n_time_drops[0], params.n_time_drops[1] + 1))
    placed: list[tuple[int, int]] = []
    for _ in range(n_drops):
        length = int(rng.integers(lo, hi + 1))
        for _attempt in range(100):
            start = int(rng.integers(0, n_samples - length + 1))
            stop = start + length
            if all(stop <= s or start >= e for s, e in placed):
                placed.append((start, stop))
                break
    return sorted(placed)


def time_drop(x: Waveform, params: AugmentParams, seed: int,
              mode: str = "zero", unit: str = "ms") -> Waveform:
    """Silence (or excise) 1-5 random temporal chunks; deterministic per seed.

    `mode="zero"` keeps the length and zeroes the chunks; `mode="excise"`
    removes them.
    """
    if mode not in ("zero", "excise"):
        raise DataError(f"unknown time-drop mode {mode!r}")
    rng = np.random.default_rng(seed)
    drops = sample_time_drops(params, rng, len(x), x.sample_rate, unit)
    if mode == "zero":
        out = x.samples.copy()
        for start, stop in drops:
            out[start:stop] = 0.0
        return Waveform(out, x.sample_rate)
    keep = np.ones(len(x), dtype=bool)
    for start, stop in drops:
        keep[start:stop] = False
    return Waveform(x.samples[keep], x.sample_rate)
