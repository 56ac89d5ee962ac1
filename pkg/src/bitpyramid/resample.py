"""Deterministic separable bilinear resampling with half-pixel centers.

Both the residual pyramid and the feature codec build on this single
resampler, so its convention is pinned exactly: the source coordinature of
output cell i is (i + 0.5) * n_src / n_dst - 0.5, clamped to the valid
range.  Resizes are realized as two dense matrix products, which makes them
bit-reproducible across runs and trivially differentiable by hand.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import RangeError


@lru_cache(maxsize=4096)
def resize_weights(n_src: int, n_dst: int) -> np.ndarray:
    """Dense (n_dst, n_src) interpolation matrix for one axis.

    Rows sum to 1; each row has at most two nonzero entries.  Identity when
    n_src == n_dst.
    """
    if n_dst < 1 or n_src < 1:
        raise RangeError(f"resize target must be >= 1, got {n_src}->{n_dst}")
    W = np.zeros((n_dst, n_src))
    for i in range(n_dst):
        src = (i + 0.5) * n_src / n_dst - 0.5
        src = min(max(src, 0.0), n_src - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_src - 1)
        frac = src - lo
        W[i, lo] += 1.0 - frac
        W[i, hi] += frac
    W.setflags(write=False)
    return W


def resize_bilinear(grid: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Resize an (h, w, d) grid to (target_h, target_w, d).

    Separable: rows first, then columns, each as one matmul.  Exact identity
    when the shape already matches.
    """
    th, tw = target
    h, w, d = grid.shape
    if (h, w) == (th, tw):
        return grid.copy()
    Wr = resize_weights(h, th)
    Wc = resize_weights(w, tw)
    out = np.tensordot(Wr, grid, axes=(1, 0))         # (th, w, d)
    out = np.tensordot(out, Wc, axes=(1, 1))          # (th, d, tw)
    return np.ascontiguousarray(out.transpose(0, 2, 1))
