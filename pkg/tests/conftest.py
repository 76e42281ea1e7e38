import numpy as np
import pytest

from sepkit import datagen, dsp

SR = 8000


@pytest.fixture(scope="session")
def two_source_utterance():
    """Factory: deterministic two-speaker mixture at a given SNR/seed."""

    def make(seed=0, snr_db=2.0, duration_s=0.96):
        pool = datagen.make_speaker_pool("fix", 4, seed=100 + seed)
        a = datagen.synth_source(pool[0], duration_s, seed=2 * seed + 1)
        b = datagen.synth_source(pool[1], duration_s, seed=2 * seed + 2)
        return datagen.mix(a, b, snr_db)

    return make


@pytest.fixture(scope="session")
def spectrogram_triplet(two_source_utterance):
    """Factory: (mixture_spec, [source_specs]) for a synthetic utterance."""

    def make(seed=0, snr_db=2.0, duration_s=0.96, cfg=dsp.StftConfig()):
        utt = two_source_utterance(seed=seed, snr_db=snr_db, duration_s=duration_s)
        mix_spec = dsp.stft(utt.mixture, cfg)
        src_specs = [dsp.stft(r, cfg) for r in utt.references]
        return utt, mix_spec, src_specs

    return make


def tiny_spec(bins, sr=1000, hop_ms=4.0):
    """Wrap a raw (T, F) complex matrix as a Spectrogram for unit tests."""
    bins = np.asarray(bins, dtype=np.complex128)
    n_fft = 2 * (bins.shape[1] - 1)
    win_ms = n_fft * 1000.0 / sr
    cfg = dsp.StftConfig(window_len_ms=win_ms, hop_ms=min(hop_ms, win_ms), fft_size=n_fft)
    num_samples = (bins.shape[0] - 1) * cfg.hop_samples(sr) + n_fft
    return dsp.Spectrogram.from_complex(bins, cfg, sr, num_samples)


@pytest.fixture(scope="session")
def make_tiny_spec():
    return tiny_spec


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Small on-disk corpus shared by metrics/pipeline/cli tests."""
    out = tmp_path_factory.mktemp("tiny_corpus")
    cfg = datagen.DataConfig(
        train_utts=10, dev_utts=4, test_utts=4, duration_s=0.64,
        train_speakers=5, test_speakers=3, seed=123,
    )
    manifest = datagen.build_corpus(cfg, out)
    return cfg, out, manifest
