import numpy as np
import pytest

from bitpyramid.errors import ContractError, RangeError
from bitpyramid.ivc import (
    IvcHead,
    bit_logits,
    bitwise_ce_loss,
    conventional_param_count,
    ivc_param_count,
    predict_bits,
    savings_fraction,
)
from bitpyramid.quantizer import bits_to_index, quantize, QuantizerConfig, QuantizerKind


def make_head(h=16, d=4, seed=0, scale=0.5):
    return IvcHead.create(h, d, np.random.default_rng(seed), scale=scale)


class TestBitLogits:
    def test_zero_head_gives_uniform(self, rng):
        head = IvcHead(np.zeros((8, 4, 2)), np.zeros((4, 2)))
        logits = bit_logits(rng.standard_normal((3, 3, 8)), head)
        assert np.array_equal(logits, np.zeros((3, 3, 4, 2)))

    def test_single_bit_head_is_plain_two_way_classifier(self, rng):
        head = make_head(h=8, d=1)
        hidden = rng.standard_normal((5, 8))
        logits = bit_logits(hidden, head)
        expected = hidden @ head.weight[:, 0, :] + head.bias[0]
        np.testing.assert_allclose(logits[:, 0, :], expected, atol=1e-12)

    def test_perturbation_isolation(self, rng):
        """Touching classifier p's weights moves only bit p's logits."""
        head = make_head(h=12, d=6)
        hidden = rng.standard_normal((4, 4, 12))
        base = bit_logits(hidden, head)
        p = 3
        head.weight[:, p, :] += rng.standard_normal((12, 2))
        head.bias[p, :] += 1.0
        bumped = bit_logits(hidden, head)
        changed = np.abs(bumped - base).sum(axis=(0, 1, 3)) > 0
        assert changed.tolist() == [False, False, False, True, False, False]

    def test_shape_contract(self, rng):
        with pytest.raises(ContractError):
            bit_logits(rng.standard_normal((2, 2, 7)), make_head(h=8, d=2))


class TestBitwiseCeLoss:
    def test_uniform_prediction_is_ln2(self, rng):
        logits = np.zeros((3, 3, 4, 2))
        target = (rng.random((3, 3, 4)) < 0.5).astype(np.uint8)
        loss, _ = bitwise_ce_loss(logits, target)
        assert abs(loss - np.log(2)) < 1e-12

    def test_confident_correct_prediction_vanishes(self):
        target = np.ones((2, 2, 3), dtype=np.uint8)
        logits = np.zeros((2, 2, 3, 2))
        logits[..., 1] = 50.0
        loss, _ = bitwise_ce_loss(logits, target)
        assert loss < 1e-12

    def test_gradient_matches_central_differences(self, rng):
        logits = rng.standard_normal((3, 3, 4, 2))
        target = (rng.random((3, 3, 4)) < 0.5).astype(np.uint8)
        loss, grad = bitwise_ce_loss(logits, target)
        eps = 1e-4
        worst = 0.0
        for idx in np.ndindex(logits.shape):
            lp = logits.copy()
            lm = logits.copy()
            lp[idx] += eps
            lm[idx] -= eps
            fd = (bitwise_ce_loss(lp, target)[0] - bitwise_ce_loss(lm, target)[0]) / (2 * eps)
            denom = max(abs(fd), 1e-8)
            worst = max(worst, abs(grad[idx] - fd) / denom)
        assert worst < 1e-5

    def test_gradient_of_composition_with_head(self, rng):
        """Finite differences through bit_logits and the loss together."""
        head = make_head(h=6, d=3)
        hidden = rng.standard_normal((2, 2, 6))
        target = (rng.random((2, 2, 3)) < 0.5).astype(np.uint8)

        def loss_at(weight):
            h2 = IvcHead(weight, head.bias)
            return bitwise_ce_loss(bit_logits(hidden, h2), target)[0]

        _, grad_logits = bitwise_ce_loss(bit_logits(hidden, head), target)
        # analytic dL/dW = hidden (outer) grad_logits
        grad_w = np.einsum("mnh,mnpc->hpc", hidden, grad_logits)
        eps = 1e-5
        worst = 0.0
        rng_idx = np.random.default_rng(1)
        for _ in range(20):
            idx = tuple(rng_idx.integers(0, s) for s in head.weight.shape)
            wp, wm = head.weight.copy(), head.weight.copy()
            wp[idx] += eps
            wm[idx] -= eps
            fd = (loss_at(wp) - loss_at(wm)) / (2 * eps)
            worst = max(worst, abs(grad_w[idx] - fd) / max(abs(fd), 1e-8))
        assert worst < 1e-5

    def test_supervision_stability_under_near_zero_flip(self, rng):
        """One flipped near-zero component: one bit label changes, the loss
        moves by at most max-per-bit-CE / (cells * bits), while the integer
        label jumps by 2^p."""
        d, h, w = 8, 3, 3
        cfg = QuantizerConfig(QuantizerKind.LFQ, d)
        feats = rng.standard_normal((h, w, d))
        p_dim, cell = 5, (1, 2)
        feats[cell][p_dim] = 1e-9
        flipped = feats.copy()
        flipped[cell][p_dim] = -1e-9

        bits_a = quantize(feats, cfg)
        bits_b = quantize(flipped, cfg)
        assert (bits_a != bits_b).sum() == 1
        ya = int(bits_to_index(bits_a[cell]))
        yb = int(bits_to_index(bits_b[cell]))
        assert abs(ya - yb) == 2 ** p_dim

        logits = rng.standard_normal((h, w, d, 2))
        loss_a, _ = bitwise_ce_loss(logits, bits_a)
        loss_b, _ = bitwise_ce_loss(logits, bits_b)
        per_bit_ce = -np.log(
            np.exp(logits - logits.max(-1, keepdims=True))
            / np.exp(logits - logits.max(-1, keepdims=True)).sum(-1, keepdims=True)
        )
        bound = per_bit_ce.max() / (h * w * d)
        assert abs(loss_a - loss_b) <= bound + 1e-12

    def test_shape_contract(self, rng):
        with pytest.raises(ContractError):
            bitwise_ce_loss(rng.standard_normal((2, 2, 3, 2)),
                            np.zeros((2, 2, 4), dtype=np.uint8))


class TestParamCounts:
    def test_published_headline_figures(self):
        assert conventional_param_count(2048, 32) == 8_796_093_022_208
        assert ivc_param_count(2048, 32) == 131_072

    def test_savings_at_sixteen_bits(self):
        assert ivc_param_count(2048, 16) == 65_536
        assert conventional_param_count(2048, 16) == 134_217_728
        assert abs(savings_fraction(2048, 16) - (1 - 65_536 / 134_217_728)) < 1e-15
        assert round(100 * savings_fraction(2048, 16), 3) == 99.951

    def test_single_bit_equality_base_case(self):
        assert conventional_param_count(100, 1) == ivc_param_count(100, 1) == 200
        assert savings_fraction(100, 1) == 0.0

    def test_big_integer_exactness(self):
        # far beyond float precision; must stay exact
        v = conventional_param_count(4096, 64)
        assert v == 4096 * (2 ** 64)
        assert v % 2 ** 64 == 0

    def test_monotonicity(self):
        assert conventional_param_count(64, 12) < conventional_param_count(64, 13)
        assert conventional_param_count(64, 12) < conventional_param_count(65, 12)
        assert ivc_param_count(64, 12) < ivc_param_count(64, 13)

    def test_bias_accounting_is_separate(self):
        head = make_head(h=32, d=8)
        assert head.param_count() == 2 * 32 * 8
        assert head.param_count(include_bias=True) == 2 * 32 * 8 + 2 * 8

    def test_range_errors(self):
        with pytest.raises(RangeError):
            ivc_param_count(0, 4)
        with pytest.raises(RangeError):
            conventional_param_count(4, 0)


class TestPredictBits:
    def test_greedy_argmax(self):
        logits = np.zeros((2, 2, 4, 2))
        logits[..., 0] = -1.0
        logits[..., 1] = 1.0
        assert predict_bits(logits, greedy=True).min() == 1

    def test_greedy_invariant_to_positive_rescaling(self, rng):
        logits = rng.standard_normal((3, 3, 8, 2))
        a = predict_bits(logits, greedy=True)
        b = predict_bits(17.3 * logits, greedy=True)
        assert np.array_equal(a, b)

    def test_low_temperature_agrees_with_greedy_on_margins(self, rng):
        logits = rng.standard_normal((50, 50, 4, 2))
        margin = np.abs(logits[..., 1] - logits[..., 0])
        keep = margin >= 0.5
        greedy = predict_bits(logits, greedy=True)
        sampled = predict_bits(logits, temperature=0.01, rng=np.random.default_rng(0))
        assert np.array_equal(greedy[keep], sampled[keep])

    def test_symmetric_sampling_concentration(self):
        logits = np.zeros((100, 100, 1, 2))  # 10,000 fair bits
        bits = predict_bits(logits, temperature=1.0, rng=np.random.default_rng(3))
        assert abs(bits.mean() - 0.5) < 0.02

    def test_sampling_requires_generator_and_temperature(self):
        logits = np.zeros((1, 1, 1, 2))
        with pytest.raises(RangeError):
            predict_bits(logits, temperature=0.0, rng=np.random.default_rng(0))
        with pytest.raises(RangeError):
            predict_bits(logits, temperature=1.0)
