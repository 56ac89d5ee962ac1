import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bitpyramid.correction import (
    BscConfig,
    apply_trace,
    encode_with_bsc,
    random_flip,
    two_arm_study,
)
from bitpyramid.errors import RangeError
from bitpyramid.pyramid import encode
from bitpyramid.quantizer import QuantizerConfig, QuantizerKind, dequantize, quantize
from bitpyramid.resample import resize_bilinear
from bitpyramid.schedule import BSC_STUDY_ID, schedule_by_id, schedule_for
from bitpyramid.toydata import smooth_blob_field

BSQ16 = QuantizerConfig(QuantizerKind.BSQ, 16)
S7 = schedule_for(1.0).truncated(7)


def field(seed=0, levels=7):
    return smooth_blob_field(np.random.default_rng(seed), 16, 16, 16, levels=levels)


class TestRandomFlip:
    def test_zero_ratio_identity(self, rng):
        bits = (rng.random((4, 4, 16)) < 0.5).astype(np.uint8)
        assert np.array_equal(random_flip(bits, 0.0, rng), bits)

    def test_full_ratio_complement(self, rng):
        bits = (rng.random((4, 4, 16)) < 0.5).astype(np.uint8)
        assert np.array_equal(random_flip(bits, 1.0, rng), 1 - bits)

    def test_flip_fraction_concentrates(self):
        bits = np.zeros((25, 25, 16), dtype=np.uint8)  # 10,000 bits
        flipped = random_flip(bits, 0.3, np.random.default_rng(9))
        frac = flipped.mean()
        assert abs(frac - 0.3) < 0.02

    def test_ratio_range_checked(self, rng):
        bits = np.zeros((2, 2, 4), dtype=np.uint8)
        with pytest.raises(RangeError):
            random_flip(bits, -0.1, rng)
        with pytest.raises(RangeError):
            random_flip(bits, 1.1, rng)

    def test_config_range_checked(self):
        with pytest.raises(RangeError):
            BscConfig(max_flip_ratio=1.5)
        with pytest.raises(RangeError):
            BscConfig(max_flip_ratio=-0.01)

    def test_deterministic_under_seed(self):
        bits = np.zeros((8, 8, 16), dtype=np.uint8)
        a = random_flip(bits, 0.4, np.random.default_rng(5))
        b = random_flip(bits, 0.4, np.random.default_rng(5))
        assert np.array_equal(a, b)


class TestEncodeWithBsc:
    def test_p_zero_reduces_to_plain_encoder(self):
        for seed in range(5):
            F = field(seed)
            plain, inputs_plain = encode(F, S7, BSQ16)
            bsc, inputs_bsc, trace = encode_with_bsc(F, S7, BSQ16, BscConfig(0.0, seed))
            assert all(np.array_equal(a, b)
                       for a, b in zip(plain.residuals, bsc.residuals))
            assert all(np.array_equal(a, b) for a, b in zip(inputs_plain, inputs_bsc))
            assert all(r == 0.0 for r in trace.ratios)
            assert trace.flipped_bit_count() == 0

    def test_p_zero_across_builtin_schedules(self, rng):
        """Zero-noise degeneracy holds for every built-in ladder."""
        from bitpyramid.schedule import registered_schedules

        cfg = QuantizerConfig(QuantizerKind.BSQ, 8)
        for sched in [s for s in registered_schedules() if 1 <= s.schedule_id <= 15]:
            h, w = sched.final_scale
            F = 0.5 * rng.standard_normal((h, w, 8))
            plain, _ = encode(F, sched, cfg)
            bsc, _, _ = encode_with_bsc(F, sched, cfg, BscConfig(0.0, 1))
            assert all(np.array_equal(a, b)
                       for a, b in zip(plain.residuals, bsc.residuals))

    def test_labels_satisfy_requantization_identity(self):
        """Each label re-derives from the flipped stream it was computed on."""
        F = field(3)
        pyr, _, trace = encode_with_bsc(F, S7, BSQ16, BscConfig(0.3, 11))
        flipped = apply_trace(pyr, trace)
        recon_flip = np.zeros_like(F)
        for k, (hk, wk) in enumerate(S7.scales):
            expected = quantize(resize_bilinear(F - recon_flip, (hk, wk)), BSQ16)
            assert np.array_equal(pyr.residuals[k], expected)
            recon_flip = recon_flip + resize_bilinear(dequantize(flipped[k], BSQ16), (16, 16))

    def test_shapes_and_budget_match_plain_encoder(self):
        F = field(4)
        plain, inputs_plain = encode(F, S7, BSQ16)
        bsc, inputs_bsc, _ = encode_with_bsc(F, S7, BSQ16, BscConfig(0.3, 2))
        assert [r.shape for r in bsc.residuals] == [r.shape for r in plain.residuals]
        assert [f.shape for f in inputs_bsc] == [f.shape for f in inputs_plain]
        assert bsc.total_bits() == plain.total_bits()

    def test_determinism_under_seed(self):
        F = field(5)
        a = encode_with_bsc(F, S7, BSQ16, BscConfig(0.3, 7), sample_index=3)
        b = encode_with_bsc(F, S7, BSQ16, BscConfig(0.3, 7), sample_index=3)
        assert all(np.array_equal(x, y) for x, y in zip(a[0].residuals, b[0].residuals))
        assert all(np.array_equal(x, y) for x, y in zip(a[1], b[1]))
        assert a[2].ratios == b[2].ratios
        assert all(np.array_equal(x, y) for x, y in zip(a[2].masks, b[2].masks))

    def test_sample_split_changes_randomness(self):
        F = field(5)
        a = encode_with_bsc(F, S7, BSQ16, BscConfig(0.3, 7), sample_index=0)
        b = encode_with_bsc(F, S7, BSQ16, BscConfig(0.3, 7), sample_index=1)
        assert a[2].ratios != b[2].ratios

    def test_ratios_bounded_by_p(self):
        F = field(6)
        for p in (0.1, 0.5, 1.0):
            _, _, trace = encode_with_bsc(F, S7, BSQ16, BscConfig(p, 13))
            assert all(0.0 <= r <= p for r in trace.ratios)

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=10, deadline=None)
    def test_p_zero_property(self, seed):
        F = field(seed % 7)
        plain, _ = encode(F, S7, BSQ16)
        bsc, _, _ = encode_with_bsc(F, S7, BSQ16, BscConfig(0.0, seed))
        assert all(np.array_equal(a, b) for a, b in zip(plain.residuals, bsc.residuals))


class TestTwoArmStudy:
    @pytest.mark.parametrize("ratio", [0.1, 0.2, 0.3])
    def test_compensation_dominates(self, ratio):
        sched = schedule_by_id(BSC_STUDY_ID)
        rng = np.random.default_rng(7)
        fields = [smooth_blob_field(rng, 16, 16, 16, levels=sched.K) for _ in range(16)]
        res = two_arm_study(fields, sched, BSQ16, ratio, flip_scale=2, seed=0)
        assert res.beats_naive >= 15
        assert res.within_budget >= 14
        assert res.both >= 14
