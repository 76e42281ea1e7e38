"""Time-frequency analysis and synthesis.

Framing, Hamming windowing, one-sided STFT, least-squares overlap-add
inverse, per-bin magnitude normalization, and PCM16 WAV I/O.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputTooShort, InvalidConfig, ShapeMismatch

# Overlap-add bins with window-power below this are treated as uncovered.
_OLA_EPS = 1e-12

_PCM16_FULL_SCALE = 32767.0


@dataclass(frozen=True)
class AudioBuffer:
    """Mono time-domain signal with its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise InvalidConfig("audio must be a non-empty 1-D sample array")
        if not np.all(np.isfinite(samples)):
            raise InvalidConfig("audio samples must be finite")
        if self.sample_rate <= 0:
            raise InvalidConfig(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2)))


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters. Defaults give 129 bins at 8 kHz."""

    window_len_ms: float = 32.0
    hop_ms: float = 16.0
    window_kind: str = "hamming"
    fft_size: int | None = None  # None -> window length in samples

    def __post_init__(self):
        if self.window_len_ms <= 0 or self.hop_ms <= 0:
            raise InvalidConfig("window and hop lengths must be positive")
        if self.hop_ms > self.window_len_ms:
            raise InvalidConfig("hop must not exceed the window length")
        if self.window_kind != "hamming":
            raise InvalidConfig(f"unsupported window kind: {self.window_kind!r}")

    def window_samples(self, sample_rate: int) -> int:
        return int(round(self.window_len_ms * sample_rate / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))

    def fft_samples(self, sample_rate: int) -> int:
        win = self.window_samples(sample_rate)
        n_fft = win if self.fft_size is None else int(self.fft_size)
        if n_fft < win:
            raise InvalidConfig("fft_size must be at least the window length")
        return n_fft

    def num_bins(self, sample_rate: int) -> int:
        return self.fft_samples(sample_rate) // 2 + 1

    def window(self, sample_rate: int) -> np.ndarray:
        return np.hamming(self.window_samples(sample_rate))


@dataclass(frozen=True)
class Spectrogram:
    """One-sided complex STFT with cached magnitude and phase, shape (T, F)."""

    complex_bins: np.ndarray
    magnitude: np.ndarray
    phase: np.ndarray
    config: StftConfig
    sample_rate: int
    num_samples: int

    @classmethod
    def from_complex(
        cls,
        complex_bins: np.ndarray,
        config: StftConfig,
        sample_rate: int,
        num_samples: int,
    ) -> "Spectrogram":
        bins = np.asarray(complex_bins, dtype=np.complex128)
        if bins.ndim != 2:
            raise ShapeMismatch("complex bins must be a (T, F) matrix")
        if bins.shape[1] != config.num_bins(sample_rate):
            raise ShapeMismatch(
                f"expected F={config.num_bins(sample_rate)} bins, got {bins.shape[1]}"
            )
        magnitude = np.abs(bins)
        phase = np.angle(bins)
        # angle() maps -1-0j to -pi; fold onto (-pi, pi].
        phase[phase == -np.pi] = np.pi
        return cls(bins, magnitude, phase, config, sample_rate, num_samples)

    @property
    def num_frames(self) -> int:
        return self.complex_bins.shape[0]

    @property
    def num_bins(self) -> int:
        return self.complex_bins.shape[1]

    def validate(self) -> None:
        if self.magnitude.shape != self.complex_bins.shape:
            raise ShapeMismatch("magnitude cache does not match complex bins")
        if self.phase.shape != self.complex_bins.shape:
            raise ShapeMismatch("phase cache does not match complex bins")
        if self.num_bins != self.config.num_bins(self.sample_rate):
            raise ShapeMismatch("bin count does not match the STFT config")


def frame_count(num_samples: int, window: int, hop: int) -> int:
    """Frames fitting fully inside the signal: 1 + floor((len - win) / hop)."""
    if num_samples < window:
        raise InputTooShort(
            f"need at least {window} samples for one window, got {num_samples}"
        )
    return 1 + (num_samples - window) // hop


def stft(audio: AudioBuffer, cfg: StftConfig = StftConfig()) -> Spectrogram:
    """One-sided STFT of a mono signal.

    Frames start every hop; stray tail samples shorter than a hop are not
    analyzed (synthesis zero-fills them). Deterministic for identical inputs.
    """
    sr = audio.sample_rate
    win = cfg.window_samples(sr)
    hop = cfg.hop_samples(sr)
    n_fft = cfg.fft_samples(sr)
    n_frames = frame_count(len(audio), win, hop)

    window = cfg.window(sr)
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = audio.samples[idx] * window[None, :]
    bins = np.fft.rfft(frames, n=n_fft, axis=1)
    return Spectrogram.from_complex(bins, cfg, sr, len(audio))


def istft(spec: Spectrogram) -> AudioBuffer:
    """Least-squares overlap-add inverse of :func:`stft`.

    The synthesis window equals the analysis window and the overlap-add sum
    is normalized by the window-power sum, so the roundtrip is exact wherever
    at least one window covers a sample (the 32/16 ms Hamming default is not
    exactly COLA). Output is truncated or zero-padded to the original length.
    """
    spec.validate()
    sr = spec.sample_rate
    cfg = spec.config
    win = cfg.window_samples(sr)
    hop = cfg.hop_samples(sr)
    n_fft = cfg.fft_samples(sr)
    n_frames = spec.num_frames

    window = cfg.window(sr)
    frames = np.fft.irfft(spec.complex_bins, n=n_fft, axis=1)[:, :win]
    frames *= window[None, :]

    out_len = (n_frames - 1) * hop + win
    acc = np.zeros(out_len)
    norm = np.zeros(out_len)
    win_sq = window**2
    for m in range(n_frames):
        sl = slice(m * hop, m * hop + win)
        acc[sl] += frames[m]
        norm[sl] += win_sq
    covered = norm > _OLA_EPS
    acc[covered] /= norm[covered]
    acc[~covered] = 0.0

    out = np.zeros(spec.num_samples)
    n = min(spec.num_samples, out_len)
    out[:n] = acc[:n]
    return AudioBuffer(out, sr)


@dataclass(frozen=True)
class NormalizationStats:
    """Per-frequency-bin mean/variance computed on the training set."""

    mean: np.ndarray
    var: np.ndarray
    degenerate_bins: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        var = np.asarray(self.var, dtype=np.float64)
        if mean.shape != var.shape or mean.ndim != 1:
            raise ShapeMismatch("mean and var must be 1-D with equal length")
        if np.any(var <= 0):
            raise InvalidConfig("variance entries must be positive")
        flags = self.degenerate_bins
        if flags is None:
            flags = np.zeros(mean.shape, dtype=bool)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)
        object.__setattr__(self, "degenerate_bins", np.asarray(flags, dtype=bool))

    @property
    def num_bins(self) -> int:
        return self.mean.shape[0]


def fit_normalization(magnitudes: list[np.ndarray]) -> NormalizationStats:
    """Pool frames of all training magnitudes and fit per-bin moments.

    Bins with zero variance (e.g. a silent corpus at some frequency) get
    variance 1 and are flagged so diagnostics can report them.
    """
    if not magnitudes:
        raise InvalidConfig("need at least one magnitude matrix to fit stats")
    stacked = np.concatenate([np.asarray(m, dtype=np.float64) for m in magnitudes], axis=0)
    mean = stacked.mean(axis=0)
    var = stacked.var(axis=0)
    degenerate = var == 0.0
    var = np.where(degenerate, 1.0, var)
    return NormalizationStats(mean, var, degenerate)


def normalize_magnitude(mag: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Standardize each frequency bin to zero mean, unit variance."""
    mag = np.asarray(mag, dtype=np.float64)
    if mag.ndim != 2 or mag.shape[1] != stats.num_bins:
        raise ShapeMismatch(
            f"magnitude has {mag.shape[-1] if mag.ndim else 0} bins, stats expect {stats.num_bins}"
        )
    return (mag - stats.mean) / np.sqrt(stats.var)


def denormalize_magnitude(mag_norm: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Inverse of :func:`normalize_magnitude`, for diagnostics."""
    mag_norm = np.asarray(mag_norm, dtype=np.float64)
    if mag_norm.ndim != 2 or mag_norm.shape[1] != stats.num_bins:
        raise ShapeMismatch("normalized magnitude does not match stats")
    return mag_norm * np.sqrt(stats.var) + stats.mean


def read_wav(path: str | Path, expected_rate: int | None = None) -> AudioBuffer:
    """Read a PCM16 mono WAV file into a float64 buffer in [-1, 1]."""
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise InvalidConfig(f"{path}: expected mono, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise InvalidConfig(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
        rate = wf.getframerate()
        if expected_rate is not None and rate != expected_rate:
            raise InvalidConfig(f"{path}: sample rate {rate} != configured {expected_rate}")
        raw = wf.readframes(wf.getnframes())
    ints = np.frombuffer(raw, dtype="<i2")
    return AudioBuffer(ints.astype(np.float64) / _PCM16_FULL_SCALE, rate)


def write_wav_int16(path: str | Path, ints: np.ndarray, sample_rate: int) -> None:
    """Write already-quantized int16 samples as a PCM16 mono WAV."""
    ints = np.asarray(ints)
    if ints.dtype != np.int16:
        if np.any(ints > 32767) or np.any(ints < -32768):
            raise InvalidConfig("integer samples exceed the int16 range")
        ints = ints.astype(np.int16)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(ints.astype("<i2").tobytes())


def write_wav(path: str | Path, audio: AudioBuffer) -> None:
    """Quantize a float buffer to PCM16 (clipping at full scale) and write it."""
    x = np.clip(audio.samples, -1.0, 1.0)
    ints = np.round(x * _PCM16_FULL_SCALE).astype(np.int16)
    write_wav_int16(path, ints, audio.sample_rate)


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Round float samples (full scale 1.0) to int32 PCM16 steps, no clipping."""
    return np.round(np.asarray(samples, dtype=np.float64) * _PCM16_FULL_SCALE).astype(np.int64)


def dequantize_pcm16(ints: np.ndarray) -> np.ndarray:
    return np.asarray(ints, dtype=np.float64) / _PCM16_FULL_SCALE
