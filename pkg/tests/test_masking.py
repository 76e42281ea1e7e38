import numpy as np
import pytest

from sepkit import dsp, masking
from sepkit.errors import ContractViolation, ShapeMismatch


class TestIpsm:
    def test_single_active_source_gets_unit_mask(self, make_tiny_spec):
        rng = np.random.default_rng(0)
        active = make_tiny_spec(rng.standard_normal((4, 5)) + 1j * rng.standard_normal((4, 5)))
        silent = make_tiny_spec(np.zeros((4, 5)))
        mix = active
        masks = masking.ipsm([active, silent], mix)
        energetic = mix.magnitude >= masking.MIX_MAG_EPS
        np.testing.assert_allclose(masks.masks[0][energetic], 1.0, atol=1e-12)
        np.testing.assert_allclose(masks.masks[1][energetic], 0.0, atol=1e-12)

    def test_half_magnitude_in_phase_gives_half_mask(self, make_tiny_spec):
        # |X| = 1 and |Y| = 2 with equal phase -> mask 0.5.
        src = make_tiny_spec(np.full((3, 4), 1.0 + 0j))
        other = make_tiny_spec(np.full((3, 4), 1.0 + 0j))
        mix = make_tiny_spec(np.full((3, 4), 2.0 + 0j))
        masks = masking.ipsm([src, other], mix)
        np.testing.assert_allclose(masks.masks[0], 0.5)

    def test_quarter_turn_phase_gives_zero_mask(self, make_tiny_spec):
        src = make_tiny_spec(np.full((2, 3), 1j))  # phase pi/2
        other = make_tiny_spec(np.full((2, 3), 1.0 + 0j))
        mix = make_tiny_spec(np.full((2, 3), 2.0 + 0j))  # phase 0
        masks = masking.ipsm([src, other], mix)
        np.testing.assert_allclose(masks.masks[0], 0.0, atol=1e-15)

    def test_masks_sum_to_one_where_energetic(self, spectrogram_triplet):
        _, mix_spec, src_specs = spectrogram_triplet(seed=1)
        masks = masking.ipsm(src_specs, mix_spec)
        energetic = mix_spec.magnitude >= masking.MIX_MAG_EPS
        total = masks.masks.sum(axis=0)
        np.testing.assert_allclose(total[energetic], 1.0, atol=1e-6)

    def test_quiet_bins_masked_to_zero(self, make_tiny_spec):
        src = make_tiny_spec(np.full((2, 2), 1.0 + 0j))
        mix = make_tiny_spec(np.full((2, 2), 1e-12 + 0j))
        masks = masking.ipsm([src, src], mix)
        np.testing.assert_array_equal(masks.masks, 0.0)

    def test_clamp_flag(self, spectrogram_triplet):
        _, mix_spec, src_specs = spectrogram_triplet(seed=2)
        clamped = masking.ipsm(src_specs, mix_spec, clamp=(0.0, 1.0))
        assert clamped.masks.min() >= 0.0 and clamped.masks.max() <= 1.0
        free = masking.ipsm(src_specs, mix_spec)
        assert free.masks.max() > 1.0 or free.masks.min() < 0.0

    def test_shape_mismatch(self, make_tiny_spec):
        a = make_tiny_spec(np.ones((3, 4)))
        b = make_tiny_spec(np.ones((2, 4)))
        with pytest.raises(ShapeMismatch):
            masking.ipsm([a, b], a)


class TestDominantMembership:
    def test_disjoint_supports(self, make_tiny_spec):
        a = np.zeros((2, 4), dtype=complex)
        b = np.zeros((2, 4), dtype=complex)
        a[:, :2] = 1.0
        b[:, 2:] = 1.0
        m = masking.dominant_membership([make_tiny_spec(a), make_tiny_spec(b)])
        labels = m.labels.reshape(2, 4)
        np.testing.assert_array_equal(labels[:, :2], 0)
        np.testing.assert_array_equal(labels[:, 2:], 1)

    def test_exact_tie_goes_to_lowest_index(self, make_tiny_spec):
        a = make_tiny_spec(np.full((2, 3), 0.7 + 0j))
        b = make_tiny_spec(np.full((2, 3), 0.7 + 0j))
        m = masking.dominant_membership([a, b])
        np.testing.assert_array_equal(m.labels, 0)

    def test_matches_per_bin_argmax_oracle(self, make_tiny_spec):
        rng = np.random.default_rng(3)
        specs = [
            make_tiny_spec(rng.standard_normal((5, 6)) + 1j * rng.standard_normal((5, 6)))
            for _ in range(3)
        ]
        m = masking.dominant_membership(specs)
        # brute force per bin
        expect = np.zeros((5, 6), dtype=int)
        for t in range(5):
            for f in range(6):
                expect[t, f] = int(np.argmax([abs(s.complex_bins[t, f]) for s in specs]))
        np.testing.assert_array_equal(m.labels.reshape(5, 6), expect)

    def test_rows_sum_to_one(self, spectrogram_triplet):
        _, _, src_specs = spectrogram_triplet(seed=4)
        m = masking.dominant_membership(src_specs)
        np.testing.assert_array_equal(m.onehot.sum(axis=1), 1.0)


class TestApplyMask:
    def test_all_ones_mask_keeps_mixture_magnitude(self, spectrogram_triplet):
        _, mix_spec, _ = spectrogram_triplet(seed=5)
        ones = masking.MaskSet(np.ones((2,) + mix_spec.magnitude.shape), "estimated")
        out = masking.apply_mask(mix_spec, ones)
        for est in out:
            np.testing.assert_allclose(est.magnitude, mix_spec.magnitude, atol=1e-12)

    def test_zero_mask_silences(self, spectrogram_triplet):
        _, mix_spec, _ = spectrogram_triplet(seed=5)
        zeros = masking.MaskSet(np.zeros((2,) + mix_spec.magnitude.shape), "estimated")
        out = masking.apply_mask(mix_spec, zeros)
        assert all(np.all(e.magnitude == 0) for e in out)

    def test_complementary_binary_masks_partition_magnitude(self, spectrogram_triplet):
        _, mix_spec, _ = spectrogram_triplet(seed=6)
        t, f = mix_spec.magnitude.shape
        m0 = (np.arange(t * f).reshape(t, f) % 2).astype(float)
        masks = masking.MaskSet(np.stack([m0, 1 - m0]), "binary")
        out = masking.apply_mask(mix_spec, masks)
        np.testing.assert_allclose(
            out[0].magnitude + out[1].magnitude, mix_spec.magnitude, atol=1e-12
        )

    def test_linear_in_mask(self, spectrogram_triplet):
        _, mix_spec, _ = spectrogram_triplet(seed=7)
        rng = np.random.default_rng(8)
        shape = (2,) + mix_spec.magnitude.shape
        m1, m2 = rng.random(shape), rng.random(shape)
        out_sum = masking.apply_mask(mix_spec, masking.MaskSet(m1 + m2, "estimated"))
        out_1 = masking.apply_mask(mix_spec, masking.MaskSet(m1, "estimated"))
        out_2 = masking.apply_mask(mix_spec, masking.MaskSet(m2, "estimated"))
        for s in range(2):
            np.testing.assert_allclose(
                out_sum[s].complex_bins,
                out_1[s].complex_bins + out_2[s].complex_bins,
                atol=1e-12,
            )

    def test_negative_estimated_mask_rejected(self, spectrogram_triplet):
        _, mix_spec, _ = spectrogram_triplet(seed=7)
        bad = masking.MaskSet(-np.ones((2,) + mix_spec.magnitude.shape), "estimated")
        with pytest.raises(ContractViolation):
            masking.apply_mask(mix_spec, bad)

    def test_negative_ipsm_mask_allowed(self, make_tiny_spec):
        mix = make_tiny_spec(np.full((2, 3), 1.0 + 0j))
        masks = masking.MaskSet(np.full((2, 2, 3), -0.25), "ipsm")
        out = masking.apply_mask(mix, masks)
        np.testing.assert_allclose(out[0].magnitude, 0.25)


class TestReconstruct:
    def test_all_ones_mask_roundtrips_mixture(self, two_source_utterance):
        utt = two_source_utterance(seed=9)
        mix_spec = dsp.stft(utt.mixture)
        ones = masking.MaskSet(np.ones((2,) + mix_spec.magnitude.shape), "estimated")
        outs = masking.reconstruct(mix_spec, ones)
        n = len(utt.mixture)
        interior = slice(256, n - 2 * 256)
        for out in outs:
            err = np.linalg.norm(out.samples[interior] - utt.mixture.samples[interior])
            assert err / np.linalg.norm(utt.mixture.samples[interior]) < 1e-3

    def test_zero_mask_gives_silence(self, two_source_utterance):
        utt = two_source_utterance(seed=9)
        mix_spec = dsp.stft(utt.mixture)
        zeros = masking.MaskSet(np.zeros((2,) + mix_spec.magnitude.shape), "estimated")
        outs = masking.reconstruct(mix_spec, zeros)
        assert all(np.all(o.samples == 0) for o in outs)

    def test_ipsm_reconstructions_sum_to_mixture(self, two_source_utterance):
        # Sum of phase-sensitive targets equals the mixture magnitude, so
        # the masked estimates add back up to the mixture.
        utt = two_source_utterance(seed=10)
        mix_spec = dsp.stft(utt.mixture)
        src_specs = [dsp.stft(r) for r in utt.references]
        outs = masking.reconstruct(mix_spec, masking.ipsm(src_specs, mix_spec))
        total = outs[0].samples + outs[1].samples
        n = len(utt.mixture)
        interior = slice(256, n - 2 * 256)
        err = np.linalg.norm(total[interior] - utt.mixture.samples[interior])
        assert err / np.linalg.norm(utt.mixture.samples[interior]) < 1e-3
