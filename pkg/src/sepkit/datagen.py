"""Synthetic two-source corpora.

Harmonic "speakers" with per-speaker spectral envelopes stand in for real
recordings: each profile fixes an F0 range, a resonance envelope, and an
amplitude-modulation rate so that different speakers remain spectrally
distinguishable. Mixing is additive at a requested SNR; train/dev share a
speaker pool that is disjoint from the test pool (open condition).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .errors import DegenerateSource, InvalidConfig, ManifestError, SplitViolation

F0_FLOOR = 60.0
F0_CEIL = 400.0

# Headroom factor applied before PCM16 quantization.
_PEAK_TARGET = 0.95


@dataclass(frozen=True)
class SpeakerProfile:
    """Identity of one synthetic speaker."""

    id: str
    f0_range: tuple[float, float]
    formant_seed: int
    modulation_rate: float

    def __post_init__(self):
        lo, hi = self.f0_range
        if not (F0_FLOOR < lo < hi < F0_CEIL):
            raise InvalidConfig(
                f"f0_range must satisfy {F0_FLOOR} < lo < hi < {F0_CEIL}, got {self.f0_range}"
            )
        if self.modulation_rate <= 0:
            raise InvalidConfig("modulation_rate must be positive")


@dataclass(frozen=True)
class MixtureSpec:
    """Recipe for one mixture: two distinct speakers, an SNR, and a seed."""

    source_a: SpeakerProfile
    source_b: SpeakerProfile
    snr_db: float
    duration_s: float
    seed: int

    def __post_init__(self):
        if self.source_a.id == self.source_b.id:
            raise InvalidConfig("mixture sources must be distinct speakers")


@dataclass
class Utterance:
    """A mixture with its reference sources; mixture == sum(references)."""

    mixture: dsp.AudioBuffer
    references: list[dsp.AudioBuffer]
    spec: MixtureSpec | None = None


def _resonance_envelope(freqs_hz: np.ndarray, formant_seed: int) -> np.ndarray:
    """Speaker-specific spectral weighting: a few random resonance bumps

    on a gentle downward tilt."""
    rng = np.random.default_rng(formant_seed)
    centers = rng.uniform(300.0, 3200.0, size=3)
    widths = rng.uniform(120.0, 400.0, size=3)
    gains = rng.uniform(0.5, 1.5, size=3)
    env = 0.15 * (1.0 / np.sqrt(1.0 + freqs_hz / 400.0))
    for c, w, g in zip(centers, widths, gains):
        env = env + g * np.exp(-0.5 * ((freqs_hz - c) / w) ** 2)
    return env


def synth_source(
    profile: SpeakerProfile,
    duration_s: float,
    seed: int,
    sample_rate: int = 8000,
) -> dsp.AudioBuffer:
    """Synthesize one unit-RMS harmonic source for a speaker.

    The F0 follows a reflected random walk inside the profile range; the
    harmonic amplitudes come from the profile's resonance envelope; slow
    amplitude modulation and one or two short pauses give speech-like
    temporal structure. Deterministic in (profile, duration, seed).
    """
    if duration_s < 0.5:
        raise InvalidConfig("source duration must be at least 0.5 s")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    lo, hi = profile.f0_range

    # F0 control track at 50 Hz, reflected into [lo, hi], then upsampled.
    n_ctrl = max(2, int(np.ceil(duration_s * 50)) + 1)
    steps = rng.normal(0.0, 0.04 * (hi - lo), size=n_ctrl)
    steps[0] = rng.uniform(lo, hi)
    track = np.cumsum(steps)
    span = hi - lo
    track = lo + np.abs((track - lo) % (2 * span) - span)
    f0 = np.interp(np.arange(n), np.linspace(0, n - 1, n_ctrl), track)

    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
    n_harm = max(2, int(np.floor(0.95 * (sample_rate / 2) / hi)))
    n_harm = min(n_harm, 16)
    k = np.arange(1, n_harm + 1)
    amps = _resonance_envelope(k * float(np.median(f0)), profile.formant_seed)
    phis = rng.uniform(0, 2 * np.pi, size=n_harm)
    x = (amps[:, None] * np.sin(k[:, None] * phase[None, :] + phis[:, None])).sum(axis=0)

    # Slow amplitude modulation plus brief pauses with raised-cosine edges.
    t = np.arange(n) / sample_rate
    x *= 1.0 + 0.35 * np.sin(2 * np.pi * profile.modulation_rate * t + rng.uniform(0, 2 * np.pi))
    gate = np.ones(n)
    ramp = int(0.02 * sample_rate)
    n_pauses = int(rng.integers(1, 3)) if duration_s >= 0.8 else 1
    for _ in range(n_pauses):
        width = int(rng.uniform(0.06, 0.12) * sample_rate)
        start = int(rng.uniform(0.1, 0.9) * (n - width - 2 * ramp))
        fade = 0.5 * (1 + np.cos(np.linspace(0, np.pi, ramp)))
        lvl = 0.05
        gate[start : start + ramp] *= lvl + (1 - lvl) * fade
        gate[start + ramp : start + ramp + width] *= lvl
        gate[start + ramp + width : start + 2 * ramp + width] *= lvl + (1 - lvl) * fade[::-1]
    x *= gate

    x /= np.sqrt(np.mean(x**2))
    return dsp.AudioBuffer(x, sample_rate)


def mix(a: dsp.AudioBuffer, b: dsp.AudioBuffer, snr_db: float) -> Utterance:
    """Scale ``b`` so the a-to-b power ratio is ``snr_db``, then add.

    References are stored post-scaling, so the mixture is exactly their sum.
    """
    if a.sample_rate != b.sample_rate:
        raise InvalidConfig("sources must share a sample rate")
    if len(a) != len(b):
        raise InvalidConfig("sources must have equal length")
    p_a = np.mean(a.samples**2)
    p_b = np.mean(b.samples**2)
    if p_a == 0.0 or p_b == 0.0:
        raise DegenerateSource("cannot set an SNR against a silent source")
    gain = np.sqrt(p_a / (p_b * 10.0 ** (snr_db / 10.0)))
    scaled_b = dsp.AudioBuffer(b.samples * gain, b.sample_rate)
    mixture = dsp.AudioBuffer(a.samples + scaled_b.samples, a.sample_rate)
    return Utterance(mixture=mixture, references=[a, scaled_b])


@dataclass(frozen=True)
class DataConfig:
    """Corpus generation parameters (desk-scale defaults)."""

    train_utts: int = 500
    dev_utts: int = 100
    test_utts: int = 100
    duration_s: float = 0.96
    sample_rate: int = 8000
    snr_low_db: float = 0.0
    snr_high_db: float = 5.0
    train_speakers: int = 20
    test_speakers: int = 8
    num_sources: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.num_sources != 2:
            raise InvalidConfig("corpus generation currently emits two-source mixtures")
        if self.snr_low_db > self.snr_high_db:
            raise InvalidConfig("snr_low_db must not exceed snr_high_db")
        if min(self.train_utts, self.dev_utts, self.test_utts) < 1:
            raise InvalidConfig("each split needs at least one utterance")
        if self.train_speakers < 2 or self.test_speakers < 2:
            raise InvalidConfig("need at least two speakers per pool")


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    split: str
    mixture_path: str
    ref_paths: list[str]
    snr_db: float
    speaker_ids: list[str]

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "split": self.split,
                "mixture_path": self.mixture_path,
                "ref_paths": self.ref_paths,
                "snr_db": self.snr_db,
                "speaker_ids": self.speaker_ids,
            },
            sort_keys=True,
        )


def make_speaker_pool(prefix: str, count: int, seed: int) -> list[SpeakerProfile]:
    """Deterministic pool of distinct speaker profiles."""
    rng = np.random.default_rng(seed)
    profiles = []
    for i in range(count):
        lo = rng.uniform(80.0, 240.0)
        hi = lo * rng.uniform(1.25, 1.55)
        profiles.append(
            SpeakerProfile(
                id=f"{prefix}{i:03d}",
                f0_range=(float(lo), float(min(hi, F0_CEIL - 1.0))),
                formant_seed=int(rng.integers(0, 2**31 - 1)),
                modulation_rate=float(rng.uniform(2.0, 8.0)),
            )
        )
    return profiles


def check_pools_disjoint(train_ids: set[str], test_ids: set[str]) -> None:
    overlap = train_ids & test_ids
    if overlap:
        raise SplitViolation(f"speaker pools overlap: {sorted(overlap)}")


def _quantized_utterance(utt: Utterance) -> tuple[np.ndarray, list[np.ndarray]]:
    """Peak-scale and quantize so mixture_int == sum(ref_ints) exactly."""
    peak = max(np.max(np.abs(utt.mixture.samples)), *(np.max(np.abs(r.samples)) for r in utt.references))
    gain = _PEAK_TARGET / peak
    ref_ints = [dsp.quantize_pcm16(r.samples * gain) for r in utt.references]
    mix_ints = np.sum(ref_ints, axis=0)
    return mix_ints, ref_ints


def build_corpus(config: DataConfig, out_dir: str | Path) -> Path:
    """Write the WAV tree and JSONL manifest; returns the manifest path.

    All randomness flows from ``config.seed``; per-utterance seeds are
    derived with spawn keys so parallel and serial generation agree. Test
    speakers never appear in train/dev.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    pool_train = make_speaker_pool("trn", config.train_speakers, config.seed + 1)
    pool_test = make_speaker_pool("tst", config.test_speakers, config.seed + 2)
    check_pools_disjoint({p.id for p in pool_train}, {p.id for p in pool_test})

    splits = [
        ("train", config.train_utts, pool_train),
        ("dev", config.dev_utts, pool_train),
        ("test", config.test_utts, pool_test),
    ]
    entries: list[ManifestEntry] = []
    for split_idx, (split, count, pool) in enumerate(splits):
        for i in range(count):
            seq = np.random.SeedSequence(entropy=config.seed, spawn_key=(split_idx, i))
            seed_pick, seed_a, seed_b, seed_snr = seq.generate_state(4)
            rng = np.random.default_rng(seed_pick)
            ia, ib = rng.choice(len(pool), size=2, replace=False)
            snr = float(np.random.default_rng(seed_snr).uniform(config.snr_low_db, config.snr_high_db))
            spec = MixtureSpec(pool[ia], pool[ib], snr, config.duration_s, int(seed_a))
            src_a = synth_source(pool[ia], config.duration_s, int(seed_a), config.sample_rate)
            src_b = synth_source(pool[ib], config.duration_s, int(seed_b), config.sample_rate)
            utt = mix(src_a, src_b, snr)
            utt.spec = spec

            mix_ints, ref_ints = _quantized_utterance(utt)
            uid = f"{split}_{i:05d}"
            mix_rel = f"{split}/{uid}_mix.wav"
            ref_rels = [f"{split}/{uid}_s{s}.wav" for s in range(len(ref_ints))]
            dsp.write_wav_int16(out_dir / mix_rel, mix_ints, config.sample_rate)
            for rel, ints in zip(ref_rels, ref_ints):
                dsp.write_wav_int16(out_dir / rel, ints, config.sample_rate)
            entries.append(
                ManifestEntry(
                    id=uid,
                    split=split,
                    mixture_path=mix_rel,
                    ref_paths=ref_rels,
                    snr_db=snr,
                    speaker_ids=[pool[ia].id, pool[ib].id],
                )
            )

    manifest_path = out_dir / "manifest.jsonl"
    with open(manifest_path, "w") as fh:
        for entry in entries:
            fh.write(entry.to_json() + "\n")
    return manifest_path


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    entries = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                entries.append(
                    ManifestEntry(
                        id=rec["id"],
                        split=rec["split"],
                        mixture_path=rec["mixture_path"],
                        ref_paths=list(rec["ref_paths"]),
                        snr_db=float(rec["snr_db"]),
                        speaker_ids=list(rec["speaker_ids"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{line_no}: malformed manifest record") from exc
    if not entries:
        raise ManifestError(f"{path}: manifest is empty")
    return entries


def load_utterance(entry: ManifestEntry, base_dir: str | Path, sample_rate: int | None = None) -> Utterance:
    base = Path(base_dir)
    try:
        mixture = dsp.read_wav(base / entry.mixture_path, expected_rate=sample_rate)
        refs = [dsp.read_wav(base / p, expected_rate=sample_rate) for p in entry.ref_paths]
    except FileNotFoundError as exc:
        raise ManifestError(f"missing audio for {entry.id}: {exc}") from exc
    return Utterance(mixture=mixture, references=refs)
