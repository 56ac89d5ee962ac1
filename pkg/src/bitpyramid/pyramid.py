"""Multi-scale residual bit encoding and decoding.

The encoder walks the schedule coarse-to-fine: at scale k it quantizes the
bilinearly downsampled residual between the target feature map and the
running reconstruction, then accumulates the upsampled dequantized bits
back into the reconstruction.  The per-scale downsampled reconstructions
are exactly the inputs a next-scale predictor consumes, so they are emitted
alongside the bit planes.

All arithmetic is pure float64 with a fixed accumulation order; encoding
and reconstruction are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractError, InvalidInputError, RangeError
from .quantizer import QuantizerConfig, dequantize, quantize
from .resample import resize_bilinear
from .schedule import ScaleSchedule


@dataclass
class TokenPyramid:
    """Ordered multi-scale bit residuals for one feature map."""

    residuals: list  # uint8 arrays, (h_k, w_k, d) each
    quantizer: QuantizerConfig
    schedule: ScaleSchedule
    flip_trace: Optional["object"] = field(default=None, repr=False)

    @property
    def K(self) -> int:
        return len(self.residuals)

    @property
    def target_shape(self) -> tuple[int, int]:
        return self.schedule.final_scale

    def total_bits(self) -> int:
        return sum(r.size for r in self.residuals)

    def validate_shapes(self):
        if self.K != self.schedule.K:
            raise ContractError(f"pyramid has {self.K} scales, schedule {self.schedule.K}")
        for k, (r, (h, w)) in enumerate(zip(self.residuals, self.schedule.scales)):
            if r.shape != (h, w, self.quantizer.d):
                raise ContractError(
                    f"scale {k + 1} residual shape {r.shape} != {(h, w, self.quantizer.d)}"
                )


def _check_feature_map(F: np.ndarray, schedule: ScaleSchedule, cfg: QuantizerConfig):
    if F.ndim != 3:
        raise ContractError(f"feature map must be (h, w, d), got {F.shape}")
    h, w, d = F.shape
    if (h, w) != schedule.final_scale:
        raise ContractError(
            f"feature map spatial shape {(h, w)} != schedule final scale {schedule.final_scale}"
        )
    if d != cfg.d:
        raise ContractError(f"feature dimension {d} != quantizer d {cfg.d}")
    if not np.all(np.isfinite(F)):
        raise InvalidInputError("feature map must be finite")


def encode(F: np.ndarray, schedule: ScaleSchedule, cfg: QuantizerConfig):
    """Encode a feature map into a TokenPyramid plus next-scale inputs.

    Returns (pyramid, inputs) where inputs[k-1] is the reconstruction after
    scale k downsampled to scale k+1, for k = 1..K-1.
    """
    F = np.asarray(F, dtype=np.float64)
    _check_feature_map(F, schedule, cfg)
    h, w, _ = F.shape

    residuals = []
    inputs = []
    recon = np.zeros_like(F)
    for k, (hk, wk) in enumerate(schedule.scales):
        bits = quantize(resize_bilinear(F - recon, (hk, wk)), cfg)
        residuals.append(bits)
        recon = recon + resize_bilinear(dequantize(bits, cfg), (h, w))
        if k + 1 < schedule.K:
            inputs.append(resize_bilinear(recon, schedule.scales[k + 1]))
    return TokenPyramid(residuals, cfg, schedule), inputs


def reconstruct(pyramid: TokenPyramid, upto: int | None = None) -> np.ndarray:
    """Cumulative sum of upsampled dequantized residuals through scale `upto`."""
    K = pyramid.K
    if upto is None:
        upto = K
    if not 1 <= upto <= K:
        raise RangeError(f"upto must be in [1, {K}], got {upto}")
    h, w = pyramid.target_shape
    recon = np.zeros((h, w, pyramid.quantizer.d))
    for bits in pyramid.residuals[:upto]:
        recon = recon + resize_bilinear(dequantize(bits, pyramid.quantizer), (h, w))
    return recon


def transformer_inputs(pyramid: TokenPyramid) -> list[np.ndarray]:
    """Next-scale inputs recomputed from a pyramid alone.

    Element k-1 is the scale-k reconstruction downsampled to the scale-(k+1)
    grid; bitwise identical to the queue emitted by encode because the
    accumulation order is the same.
    """
    h, w = pyramid.target_shape
    recon = np.zeros((h, w, pyramid.quantizer.d))
    inputs = []
    for k, bits in enumerate(pyramid.residuals):
        recon = recon + resize_bilinear(dequantize(bits, pyramid.quantizer), (h, w))
        if k + 1 < pyramid.K:
            inputs.append(resize_bilinear(recon, pyramid.schedule.scales[k + 1]))
    return inputs
