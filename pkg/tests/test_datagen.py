import hashlib
import json

import numpy as np
import pytest

from sepkit import datagen, dsp
from sepkit.errors import DegenerateSource, InvalidConfig, ManifestError, SplitViolation

SR = 8000


@pytest.fixture(scope="module")
def profile():
    return datagen.SpeakerProfile(
        id="spk0", f0_range=(100.0, 150.0), formant_seed=42, modulation_rate=4.0
    )


@pytest.fixture(scope="module")
def profile_b():
    return datagen.SpeakerProfile(
        id="spk1", f0_range=(180.0, 260.0), formant_seed=7, modulation_rate=3.0
    )


class TestSynthSource:
    def test_deterministic(self, profile):
        a = datagen.synth_source(profile, 1.0, seed=5)
        b = datagen.synth_source(profile, 1.0, seed=5)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_unit_rms(self, profile):
        audio = datagen.synth_source(profile, 1.0, seed=1)
        assert abs(audio.rms() - 1.0) <= 1e-6

    def test_dominant_energy_on_harmonic_grid(self, profile):
        audio = datagen.synth_source(profile, 2.0, seed=2)
        spec = np.abs(np.fft.rfft(audio.samples))
        freqs = np.fft.rfftfreq(len(audio), 1 / SR)
        peak = freqs[np.argmax(spec)]
        lo, hi = profile.f0_range
        assert any(0.85 * lo <= peak / k <= 1.15 * hi for k in range(1, 17))

    def test_duration_and_rate(self, profile):
        audio = datagen.synth_source(profile, 0.75, seed=3)
        assert len(audio) == int(0.75 * SR)
        assert audio.sample_rate == SR

    def test_too_short_duration_rejected(self, profile):
        with pytest.raises(InvalidConfig):
            datagen.synth_source(profile, 0.2, seed=0)

    def test_profile_validation(self):
        with pytest.raises(InvalidConfig):
            datagen.SpeakerProfile("x", (50.0, 100.0), 0, 4.0)
        with pytest.raises(InvalidConfig):
            datagen.SpeakerProfile("x", (200.0, 100.0), 0, 4.0)


class TestMix:
    def test_zero_snr_equal_power(self, profile, profile_b):
        a = datagen.synth_source(profile, 1.0, seed=1)
        b = datagen.synth_source(profile_b, 1.0, seed=2)
        utt = datagen.mix(a, b, snr_db=0.0)
        p = [np.mean(r.samples**2) for r in utt.references]
        assert abs(10 * np.log10(p[0] / p[1])) < 1e-9

    def test_five_db_power_ratio(self, profile, profile_b):
        a = datagen.synth_source(profile, 1.0, seed=3)
        b = datagen.synth_source(profile_b, 1.0, seed=4)
        utt = datagen.mix(a, b, snr_db=5.0)
        p = [np.mean(r.samples**2) for r in utt.references]
        assert p[0] / p[1] == pytest.approx(10**0.5, rel=1e-9)

    def test_mixture_is_exact_sum(self, profile, profile_b):
        a = datagen.synth_source(profile, 1.0, seed=5)
        b = datagen.synth_source(profile_b, 1.0, seed=6)
        utt = datagen.mix(a, b, snr_db=3.3)
        residual = utt.mixture.samples - (utt.references[0].samples + utt.references[1].samples)
        assert np.max(np.abs(residual)) == 0.0

    def test_silent_source_rejected(self, profile):
        a = datagen.synth_source(profile, 1.0, seed=7)
        silent = dsp.AudioBuffer(np.full(len(a), 1e-300), SR)
        object.__setattr__(silent, "samples", np.zeros(len(a)))
        with pytest.raises(DegenerateSource):
            datagen.mix(a, silent, 0.0)


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    cfg = datagen.DataConfig(
        train_utts=6, dev_utts=3, test_utts=3, duration_s=0.6,
        train_speakers=4, test_speakers=3, seed=11,
    )
    manifest = datagen.build_corpus(cfg, out)
    return cfg, out, manifest


class TestBuildCorpus:
    def test_counts_per_split(self, tiny_corpus):
        _, _, manifest = tiny_corpus
        entries = datagen.load_manifest(manifest)
        counts = {s: sum(e.split == s for e in entries) for s in ("train", "dev", "test")}
        assert counts == {"train": 6, "dev": 3, "test": 3}

    def test_open_condition_split(self, tiny_corpus):
        _, _, manifest = tiny_corpus
        entries = datagen.load_manifest(manifest)
        train_ids = {s for e in entries if e.split in ("train", "dev") for s in e.speaker_ids}
        test_ids = {s for e in entries if e.split == "test" for s in e.speaker_ids}
        assert not (train_ids & test_ids)

    def test_rerun_identical_manifest_and_audio(self, tiny_corpus, tmp_path):
        cfg, out, manifest = tiny_corpus
        manifest2 = datagen.build_corpus(cfg, tmp_path)
        assert manifest.read_bytes() == manifest2.read_bytes()
        for entry in datagen.load_manifest(manifest):
            h1 = hashlib.sha256((out / entry.mixture_path).read_bytes()).hexdigest()
            h2 = hashlib.sha256((tmp_path / entry.mixture_path).read_bytes()).hexdigest()
            assert h1 == h2

    def test_mixture_equals_sum_of_references_on_disk(self, tiny_corpus):
        _, out, manifest = tiny_corpus
        for entry in datagen.load_manifest(manifest):
            utt = datagen.load_utterance(entry, out, sample_rate=SR)
            residual = utt.mixture.samples - sum(r.samples for r in utt.references)
            assert np.max(np.abs(residual)) < 1e-9

    def test_snr_exact_in_memory(self, tiny_corpus):
        cfg = datagen.DataConfig(train_speakers=4, test_speakers=2)
        pool = datagen.make_speaker_pool("t", 2, seed=0)
        a = datagen.synth_source(pool[0], 1.0, seed=1)
        b = datagen.synth_source(pool[1], 1.0, seed=2)
        for snr in (0.0, 2.5, 5.0):
            utt = datagen.mix(a, b, snr)
            p = [np.mean(r.samples**2) for r in utt.references]
            realized = 10 * np.log10(p[0] / p[1])
            assert realized == pytest.approx(snr, abs=1e-9)

    def test_snr_on_disk_within_quantization_error(self, tiny_corpus):
        # PCM16 rounding shifts realized power by ~1e-5 dB at these levels.
        _, out, manifest = tiny_corpus
        for entry in datagen.load_manifest(manifest):
            utt = datagen.load_utterance(entry, out)
            p = [np.mean(r.samples**2) for r in utt.references]
            realized = 10 * np.log10(p[0] / p[1])
            assert realized == pytest.approx(entry.snr_db, abs=1e-4)

    def test_distinct_speakers_per_mixture(self, tiny_corpus):
        _, _, manifest = tiny_corpus
        for entry in datagen.load_manifest(manifest):
            assert entry.speaker_ids[0] != entry.speaker_ids[1]

    def test_pool_overlap_rejected(self):
        with pytest.raises(SplitViolation):
            datagen.check_pools_disjoint({"a", "b"}, {"b", "c"})


class TestManifest:
    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestError):
            datagen.load_manifest(tmp_path / "nope.jsonl")

    def test_malformed_record(self, tmp_path):
        p = tmp_path / "manifest.jsonl"
        p.write_text(json.dumps({"id": "x"}) + "\n")
        with pytest.raises(ManifestError):
            datagen.load_manifest(p)

    def test_missing_audio(self, tmp_path):
        p = tmp_path / "manifest.jsonl"
        rec = {
            "id": "u", "split": "train", "mixture_path": "gone.wav",
            "ref_paths": ["gone0.wav"], "snr_db": 0.0, "speaker_ids": ["a", "b"],
        }
        p.write_text(json.dumps(rec) + "\n")
        entries = datagen.load_manifest(p)
        with pytest.raises(ManifestError):
            datagen.load_utterance(entries[0], tmp_path)
