"""Bitwise self-correction: corrupt-and-requantize encoding.

Training a next-scale predictor on clean prefixes teaches it to refine but
never to recover from its own mistakes.  The corrected encoder injects
random bit flips into each scale's residual, accumulates the *flipped*
reconstruction, and re-quantizes every subsequent residual against it, so
labels always answer "what fixes the stream you actually saw".  With flip
strength zero the loop is arithmetic-identical to the clean encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RangeError
from .pyramid import TokenPyramid, _check_feature_map
from .quantizer import QuantizerConfig, dequantize, quantize
from .resample import resize_bilinear
from .schedule import ScaleSchedule


@dataclass(frozen=True)
class BscConfig:
    """Flip strength p: per scale, a ratio is drawn uniformly from [0, p]."""

    max_flip_ratio: float = 0.3
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.max_flip_ratio <= 1.0:
            raise RangeError(f"max_flip_ratio must be in [0, 1], got {self.max_flip_ratio}")


@dataclass
class FlipTrace:
    """Realized flip ratios and masks, one entry per scale."""

    ratios: list          # float per scale
    masks: list           # uint8 arrays matching the residual shapes

    def flipped_bit_count(self) -> int:
        return int(sum(int(m.sum()) for m in self.masks))


def random_flip(bits: np.ndarray, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Flip each bit independently with probability `ratio`."""
    if not 0.0 <= ratio <= 1.0:
        raise RangeError(f"flip ratio must be in [0, 1], got {ratio}")
    mask = rng.random(bits.shape) < ratio
    return np.where(mask, 1 - bits, bits).astype(np.uint8)


def _scale_rng(seed: int, sample_index: int, k: int) -> np.random.Generator:
    # counter-based split: batch order cannot reorder the randomness
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(sample_index, k)))


def encode_with_bsc(
    F: np.ndarray,
    schedule: ScaleSchedule,
    cfg: QuantizerConfig,
    bsc: BscConfig,
    sample_index: int = 0,
    ratios: list[float] | None = None,
):
    """Corrupted-stream encoding.

    Returns (pyramid, inputs, trace): `pyramid` holds the re-quantized
    labels, `inputs` the downsampled reconstructions of the *flipped*
    stream, and `trace` the realized ratios and masks.

    `ratios` overrides the per-scale uniform draw with fixed flip
    probabilities (used by the two-arm study and tests); by default scale k
    draws ratio_k ~ U[0, max_flip_ratio] from a generator split per
    (sample_index, k).
    """
    F = np.asarray(F, dtype=np.float64)
    _check_feature_map(F, schedule, cfg)
    h, w, _ = F.shape
    if ratios is not None and len(ratios) != schedule.K:
        raise RangeError(f"need {schedule.K} ratios, got {len(ratios)}")

    labels = []
    inputs = []
    trace = FlipTrace(ratios=[], masks=[])
    recon_flip = np.zeros_like(F)
    for k, (hk, wk) in enumerate(schedule.scales):
        rng = _scale_rng(bsc.rng_seed, sample_index, k)
        ratio = float(rng.uniform(0.0, bsc.max_flip_ratio)) if ratios is None else float(ratios[k])
        bits = quantize(resize_bilinear(F - recon_flip, (hk, wk)), cfg)
        labels.append(bits)
        mask = rng.random(bits.shape) < ratio
        flipped = np.where(mask, 1 - bits, bits).astype(np.uint8)
        trace.ratios.append(ratio)
        trace.masks.append(mask.astype(np.uint8))
        recon_flip = recon_flip + resize_bilinear(dequantize(flipped, cfg), (h, w))
        if k + 1 < schedule.K:
            inputs.append(resize_bilinear(recon_flip, schedule.scales[k + 1]))
    pyramid = TokenPyramid(labels, cfg, schedule, flip_trace=trace)
    return pyramid, inputs, trace


def apply_trace(pyramid: TokenPyramid, trace: FlipTrace) -> list[np.ndarray]:
    """Flipped residuals reproduced from labels plus a trace."""
    return [
        np.where(m.astype(bool), 1 - r, r).astype(np.uint8)
        for r, m in zip(pyramid.residuals, trace.masks)
    ]


@dataclass
class TwoArmResult:
    ratio: float
    baseline_error: list
    corrected_error: list    # flipped prefix + re-quantized continuation
    naive_error: list        # flipped prefix + original clean continuation
    within_budget: int       # corrected <= budget_factor * baseline
    beats_naive: int         # corrected < naive
    trials: int
    budget_factor: float

    @property
    def both(self) -> int:
        return sum(
            1
            for c, b, n in zip(self.corrected_error, self.baseline_error, self.naive_error)
            if c <= self.budget_factor * b and c < n
        )


def two_arm_study(
    fields: list[np.ndarray],
    schedule: ScaleSchedule,
    cfg: QuantizerConfig,
    flip_ratio: float,
    flip_scale: int = 2,
    seed: int = 0,
    budget_factor: float = 1.2,
) -> TwoArmResult:
    """Compensation experiment isolating the re-quantization mechanism.

    For each field: flip the scale-`flip_scale` residual with probability
    `flip_ratio`, then compare two continuations of the corrupted prefix:
    the corrected arm re-quantizes every later residual against the flipped
    stream, the naive arm keeps the clean encoder's later residuals.  Errors
    are final-reconstruction Frobenius distances to the input.
    """
    h, w = schedule.final_scale
    ratios = [0.0] * schedule.K
    ratios[flip_scale - 1] = flip_ratio
    result = TwoArmResult(flip_ratio, [], [], [], 0, 0, len(fields), budget_factor)
    for t, F in enumerate(fields):
        F = np.asarray(F, dtype=np.float64)
        clean, _ = _encode_clean(F, schedule, cfg)
        err_base = np.linalg.norm(F - _recompose(clean, schedule, cfg, h, w))

        bsc = BscConfig(max_flip_ratio=flip_ratio, rng_seed=seed)
        pyr, _, trace = encode_with_bsc(F, schedule, cfg, bsc, sample_index=t, ratios=ratios)
        flipped = apply_trace(pyr, trace)
        # corrected arm: flipped prefix, re-quantized continuation (= the
        # flipped-stream reconstruction the corrected encoder accumulated)
        corrected = flipped[: flip_scale] + pyr.residuals[flip_scale:]
        err_corr = np.linalg.norm(F - _recompose(corrected, schedule, cfg, h, w))
        # naive arm: flipped prefix, clean continuation
        naive = flipped[: flip_scale] + clean[flip_scale:]
        err_naive = np.linalg.norm(F - _recompose(naive, schedule, cfg, h, w))

        result.baseline_error.append(float(err_base))
        result.corrected_error.append(float(err_corr))
        result.naive_error.append(float(err_naive))
    result.within_budget = sum(
        1 for c, b in zip(result.corrected_error, result.baseline_error)
        if c <= budget_factor * b
    )
    result.beats_naive = sum(
        1 for c, n in zip(result.corrected_error, result.naive_error) if c < n
    )
    return result


def _encode_clean(F, schedule, cfg):
    recon = np.zeros_like(F)
    h, w, _ = F.shape
    residuals = []
    for hk, wk in schedule.scales:
        bits = quantize(resize_bilinear(F - recon, (hk, wk)), cfg)
        residuals.append(bits)
        recon = recon + resize_bilinear(dequantize(bits, cfg), (h, w))
    return residuals, recon


def _recompose(residuals, schedule, cfg, h, w):
    recon = np.zeros((h, w, cfg.d))
    for bits in residuals:
        recon = recon + resize_bilinear(dequantize(bits, cfg), (h, w))
    return recon
