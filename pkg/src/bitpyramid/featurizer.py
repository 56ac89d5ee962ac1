"""Analytic image <-> feature-map codec.

A learned encoder/decoder pair is deliberately replaced by a fixed analytic
one so every downstream contract has an exact oracle: featurize is an s x s
patch average, centering, and an orthonormal lift from 3 color channels to
d feature channels; render is the exact adjoint (project, nearest-patch
upsample, un-center).

The lift is exactly orthonormal in floating point: each color channel owns
q = 4^j disjoint feature rows with entries +-1/sqrt(q) (a power of two), so
project(lift(x)) reproduces x without rounding.  Row assignment and signs
are derived from a fixed seed.  A power-of-two gain scales features into the
amplitude band the residual quantizer codes well.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError

LIFT_SEED = 2024
FEATURE_GAIN = 4.0
DEFAULT_STRIDE = 4


def _rows_per_channel(d: int) -> int:
    if d < 3:
        raise ContractError(f"feature lift needs d >= 3, got {d}")
    q = 1
    while 3 * q * 4 <= d:
        q *= 4
    return q


def lift_assignment(d: int):
    """(rows, signs, q): rows[c] lists the q feature dims owned by channel c."""
    q = _rows_per_channel(d)
    rng = np.random.default_rng(np.random.SeedSequence(LIFT_SEED, spawn_key=(d,)))
    perm = rng.permutation(d)
    rows = [np.sort(perm[c * q : (c + 1) * q]) for c in range(3)]
    signs = [np.where(rng.random(q) < 0.5, -1.0, 1.0) for _ in range(3)]
    return rows, signs, q


def _tree_sum(arr: np.ndarray) -> np.ndarray:
    """Pairwise sum over the last axis; exact for equal-magnitude terms."""
    while arr.shape[-1] > 1:
        if arr.shape[-1] % 2:
            arr = np.concatenate([arr[..., :-1:2] + arr[..., 1::2], arr[..., -1:]], axis=-1)
        else:
            arr = arr[..., ::2] + arr[..., 1::2]
    return arr[..., 0]


def patch_average(img: np.ndarray, stride: int) -> np.ndarray:
    H, W, c = img.shape
    if H % stride or W % stride:
        raise ContractError(f"image shape {(H, W)} not divisible by stride {stride}")
    return img.reshape(H // stride, stride, W // stride, stride, c).mean(axis=(1, 3))


def nearest_upsample(grid: np.ndarray, stride: int) -> np.ndarray:
    return np.repeat(np.repeat(grid, stride, axis=0), stride, axis=1)


def featurize(img: np.ndarray, d: int, stride: int = DEFAULT_STRIDE) -> np.ndarray:
    """(H, W, 3) image in [0, 1] -> (H/s, W/s, d) centered feature map."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractError(f"expected an (H, W, 3) image, got {img.shape}")
    avg = patch_average(img, stride)
    rows, signs, q = lift_assignment(d)
    amp = FEATURE_GAIN / np.sqrt(q)  # power of two: exact scaling
    h, w, _ = avg.shape
    F = np.zeros((h, w, d))
    centered = avg - 0.5
    for c in range(3):
        F[:, :, rows[c]] = centered[:, :, c : c + 1] * (signs[c] * amp)
    return F


def project(F: np.ndarray) -> np.ndarray:
    """Adjoint of the lift: (h, w, d) -> (h, w, 3) centered patch colors."""
    d = F.shape[-1]
    rows, signs, q = lift_assignment(d)
    amp = FEATURE_GAIN / np.sqrt(q)
    out = np.empty(F.shape[:-1] + (3,))
    for c in range(3):
        terms = F[..., rows[c]] * (signs[c] / (amp * q))
        out[..., c] = _tree_sum(terms)
    return out


def render(F: np.ndarray, stride: int = DEFAULT_STRIDE) -> np.ndarray:
    """Exact adjoint path back to pixels: project, upsample, un-center.

    Output is not clipped; writers quantizing to 8-bit clip there.
    """
    return nearest_upsample(project(np.asarray(F, dtype=np.float64)), stride) + 0.5
