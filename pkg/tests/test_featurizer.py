import numpy as np
import pytest

from bitpyramid.errors import ContractError
from bitpyramid.featurizer import (
    FEATURE_GAIN,
    featurize,
    lift_assignment,
    nearest_upsample,
    patch_average,
    project,
    render,
)
from bitpyramid.pyramid import encode, reconstruct
from bitpyramid.quantizer import QuantizerConfig, QuantizerKind
from bitpyramid.schedule import schedule_for
from bitpyramid.toydata import codec_matched_image, toy_image


class TestLift:
    @pytest.mark.parametrize("d", [3, 8, 12, 16, 32, 48, 64])
    def test_assignment_is_exactly_orthonormal(self, d):
        rows, signs, q = lift_assignment(d)
        used = np.concatenate(rows)
        assert len(set(used.tolist())) == 3 * q  # disjoint rows
        Q = np.zeros((d, 3))
        for c in range(3):
            Q[rows[c], c] = signs[c] / np.sqrt(q)
        gram = Q.T @ Q
        assert np.array_equal(gram, np.eye(3))  # exact in float

    def test_project_inverts_lift_exactly(self, rng):
        img = nearest_upsample(rng.random((6, 6, 3)), 4)
        centered = patch_average(img, 4) - 0.5
        F = featurize(img, 32, 4)
        assert np.array_equal(project(F), centered)

    def test_small_d_rejected(self):
        with pytest.raises(ContractError):
            lift_assignment(2)


class TestFeaturizeRender:
    def test_constant_gray_round_trip_exact(self):
        img = np.full((16, 16, 3), 0.5)
        F = featurize(img, 16, 4)
        assert np.array_equal(F, np.zeros((4, 4, 16)))
        assert np.array_equal(render(F, 4), img)

    def test_checkerboard_alternates_sign(self):
        img = np.zeros((8, 8, 3))
        img[0:4, 4:8] = 1.0
        img[4:8, 0:4] = 1.0
        F = featurize(img, 12, 4)
        rows, signs, q = lift_assignment(12)
        informative = F[:, :, rows[0][0]]
        assert informative[0, 0] * informative[0, 1] < 0
        assert informative[0, 0] * informative[1, 0] < 0
        assert informative[0, 0] == informative[1, 1]

    def test_round_trip_equals_patch_average(self, rng):
        img = toy_image(rng)
        out = render(featurize(img, 32, 4), 4)
        ref = nearest_upsample(patch_average(img, 4), 4)
        np.testing.assert_allclose(out, ref, atol=1e-15)

    def test_divisibility_contract(self, rng):
        with pytest.raises(ContractError):
            featurize(rng.random((10, 12, 3)), 16, 4)

    def test_adjoint_identity(self, rng):
        """<featurize(x), F> relates to <x, render(F)> through the gain,
        the stride area, and the two centering constants."""
        s, d, g = 4, 32, FEATURE_GAIN
        x = rng.random((16, 16, 3))
        F = rng.standard_normal((4, 4, d))
        lhs = float((featurize(x, d, s) * F).sum())
        G = project(F) * g  # adjoint of the pure lift
        rhs = (
            (g / s ** 2) * float((x * (render(F, s) - 0.5)).sum()) * g
            - 0.5 * g * float(G.sum())
        )
        # render embeds a 1/g, so the raw-lift adjoint picks up g twice
        assert abs(lhs - rhs) < 1e-10

    def test_render_not_clipped(self):
        F = np.zeros((2, 2, 16))
        F[..., :] = 10.0
        out = render(F, 2)
        assert out.max() > 1.0  # writers clip, the adjoint does not


class TestPipeline:
    def test_codec_matched_images_round_trip_under_threshold(self):
        sched = schedule_for(1.0).truncated(7)
        qcfg = QuantizerConfig(QuantizerKind.BSQ, 32)
        rng = np.random.default_rng(0)
        rmses = []
        for _ in range(8):
            img = codec_matched_image(rng)
            pyr, _ = encode(featurize(img, 32, 4), sched, qcfg)
            out = render(reconstruct(pyr), 4)
            rmses.append(float(np.sqrt(np.mean((out - img) ** 2))))
        assert np.median(rmses) < 0.05
