import numpy as np
import pytest

from bitpyramid.errors import RangeError
from bitpyramid.resample import resize_bilinear, resize_weights


def test_rows_sum_to_one():
    for n_src, n_dst in ((1, 4), (4, 4), (2, 3), (16, 6), (7, 13)):
        W = resize_weights(n_src, n_dst)
        np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-15)


def test_constant_broadcast_from_single_cell():
    F = np.full((1, 1, 3), 0.7)
    out = resize_bilinear(F, (4, 4))
    assert np.array_equal(out, np.full((4, 4, 3), 0.7))


def test_identity_is_exact():
    rng = np.random.default_rng(0)
    F = rng.standard_normal((4, 4, 5))
    assert np.array_equal(resize_bilinear(F, (4, 4)), F)


def test_2x2_to_3x3_matches_hand_computed_oracle():
    """Half-pixel centers: source coord of output i is (i+0.5)*2/3-0.5."""
    F = np.array([[0.0, 1.0], [2.0, 3.0]])[:, :, None]
    out = resize_bilinear(F, (3, 3))[:, :, 0]

    def sample(coord):
        c = min(max(coord, 0.0), 1.0)
        lo = int(np.floor(c))
        hi = min(lo + 1, 1)
        w = c - lo
        return lo, hi, w

    expected = np.empty((3, 3))
    for i in range(3):
        ri_lo, ri_hi, wi = sample((i + 0.5) * 2 / 3 - 0.5)
        for j in range(3):
            rj_lo, rj_hi, wj = sample((j + 0.5) * 2 / 3 - 0.5)
            expected[i, j] = (
                F[ri_lo, rj_lo, 0] * (1 - wi) * (1 - wj)
                + F[ri_lo, rj_hi, 0] * (1 - wi) * wj
                + F[ri_hi, rj_lo, 0] * wi * (1 - wj)
                + F[ri_hi, rj_hi, 0] * wi * wj
            )
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_linear_ramp_preserved_on_upsample():
    # bilinear interpolation reproduces affine functions away from clamped edges
    h = w = 8
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    F = (2.0 * yy + 3.0 * xx)[:, :, None]
    out = resize_bilinear(F, (16, 16))[:, :, 0]
    yy2 = (np.arange(16) + 0.5) * h / 16 - 0.5
    xx2 = (np.arange(16) + 0.5) * w / 16 - 0.5
    interior = slice(1, 15)
    expected = 2.0 * yy2[:, None] + 3.0 * xx2[None, :]
    np.testing.assert_allclose(out[interior, interior], expected[interior, interior], atol=1e-12)


def test_determinism():
    rng = np.random.default_rng(3)
    F = rng.standard_normal((5, 7, 2))
    a = resize_bilinear(F, (11, 3))
    b = resize_bilinear(F.copy(), (11, 3))
    assert np.array_equal(a, b)


def test_invalid_target():
    with pytest.raises(RangeError):
        resize_bilinear(np.zeros((2, 2, 1)), (0, 3))
    with pytest.raises(RangeError):
        resize_bilinear(np.zeros((2, 2, 1)), (3, -1))
