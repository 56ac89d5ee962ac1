"""Scale-by-scale generation with temperature and guidance variants.

Each scale is one forward pass: all cells of the next residual map are
classified in parallel, bits are sampled (or taken greedily), dequantized,
accumulated into the running reconstruction, and downsampled into the next
segment's input rows, exactly mirroring the encoder's input construction.

Guidance runs the conditional and null-condition branches side by side and
extrapolates `uncond + s * (cond - uncond)` either on bit logits or on the
final pre-head features; the pyramid variant ramps s linearly over scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ContractError, RangeError
from .ivc import predict_bits
from .model import DTYPE, NextScaleModel, SequenceLayout
from .pyramid import TokenPyramid
from .quantizer import QuantizerConfig, dequantize
from .resample import resize_bilinear
from .schedule import ScaleSchedule
from .toydata import NULL_CONDITION

CFG_MODES = ("none", "pyramid_logits", "logits", "features")


@dataclass(frozen=True)
class SamplerConfig:
    temperature: float = 1.0
    cfg_mode: str = "none"
    cfg_value: float | tuple = 1.0
    greedy: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        if self.cfg_mode not in CFG_MODES:
            raise RangeError(f"cfg_mode must be one of {CFG_MODES}, got {self.cfg_mode!r}")
        if not self.greedy and not self.temperature > 0:
            raise RangeError(f"temperature must be > 0, got {self.temperature}")
        if self.cfg_mode == "pyramid_logits":
            start, end = self.pyramid_range
            if start > end:
                raise RangeError(f"pyramid guidance range {start}->{end} must be non-decreasing")
        elif isinstance(self.cfg_value, tuple):
            raise RangeError("a (start, end) guidance range needs cfg_mode='pyramid_logits'")

    @property
    def pyramid_range(self) -> tuple[float, float]:
        if isinstance(self.cfg_value, tuple):
            return float(self.cfg_value[0]), float(self.cfg_value[1])
        return 1.0, float(self.cfg_value)


def cfg_schedule(k: int, K: int, mode: str, cfg_value) -> float:
    """Guidance strength for scale k of K."""
    if not 1 <= k <= K:
        raise RangeError(f"scale index {k} out of [1, {K}]")
    if mode == "none":
        return 1.0
    if mode in ("logits", "features"):
        return float(cfg_value)
    if mode == "pyramid_logits":
        if isinstance(cfg_value, tuple):
            start, end = float(cfg_value[0]), float(cfg_value[1])
        else:
            start, end = 1.0, float(cfg_value)
        if K == 1:
            return end
        return start + (end - start) * (k - 1) / (K - 1)
    raise RangeError(f"unknown cfg mode {mode!r}")


def apply_cfg(cond, uncond, s: float):
    """Extrapolate away from the unconditional branch: uncond + s (cond - uncond)."""
    if getattr(cond, "shape", None) != getattr(uncond, "shape", None):
        raise ContractError("guidance branches must have identical shapes")
    return uncond + s * (cond - uncond)


def generate(
    model: NextScaleModel,
    cond_id: int,
    schedule: ScaleSchedule,
    sampler: SamplerConfig,
    qcfg: QuantizerConfig,
    use_cache: bool = False,
    return_inputs: bool = False,
):
    """Roll out a pyramid for one condition; returns (pyramid, feature map).

    Deterministic under sampler.rng_seed; the cached and recompute execution
    paths are required to be bit-equivalent (tested), caching is purely a
    speed knob.  With return_inputs the per-scale input maps the roll-out
    consumed are returned as a third element; they are bit-identical to
    re-deriving the inputs from the finished pyramid.
    """
    if qcfg.d != model.cfg.bit_dim:
        raise ContractError(f"quantizer d {qcfg.d} != model bit_dim {model.cfg.bit_dim}")
    if not 0 <= cond_id < model.cfg.cond_vocab:
        raise ContractError(f"condition id {cond_id} outside vocab {model.cfg.cond_vocab}")
    layout = SequenceLayout.from_schedule(schedule)
    K = schedule.K
    h, w = schedule.final_scale
    rng = np.random.default_rng(sampler.rng_seed)
    guided_branches = sampler.cfg_mode != "none"

    cond_t = torch.tensor([cond_id], dtype=torch.long)
    null_t = torch.tensor([NULL_CONDITION], dtype=torch.long)
    state_c = {} if use_cache else None
    state_u = {} if use_cache else None

    rows = np.zeros((0, qcfg.d))
    residuals = []
    consumed = []
    recon = np.zeros((h, w, qcfg.d))
    with torch.no_grad():
        for k in range(1, K + 1):
            seg = k - 1
            token_rows = torch.from_numpy(rows[None, :, :]).to(DTYPE)

            def seg_hidden(ids, state):
                if use_cache:
                    return model.hidden_states(layout, token_rows, ids,
                                               upto_segment=seg, state=state)
                full = model.hidden_states(layout, token_rows, ids, upto_segment=seg)
                return full[:, layout.segment_slice(seg), :]

            hid_c = seg_hidden(cond_t, state_c)
            s_k = cfg_schedule(k, K, sampler.cfg_mode, sampler.cfg_value)
            if guided_branches:
                hid_u = seg_hidden(null_t, state_u)
                if sampler.cfg_mode == "features":
                    logits = model.bit_logits(apply_cfg(hid_c, hid_u, s_k))
                else:
                    logits = apply_cfg(model.bit_logits(hid_c),
                                       model.bit_logits(hid_u), s_k)
            else:
                logits = model.bit_logits(hid_c)

            hk, wk = schedule.scales[seg]
            logits_np = logits.numpy().reshape(hk, wk, qcfg.d, 2)
            bits = predict_bits(logits_np, temperature=sampler.temperature,
                                rng=rng, greedy=sampler.greedy)
            residuals.append(bits)
            recon = recon + resize_bilinear(dequantize(bits, qcfg), (h, w))
            if k < K:
                nxt = resize_bilinear(recon, schedule.scales[k])
                consumed.append(nxt)
                rows = np.concatenate([rows, nxt.reshape(-1, qcfg.d)], axis=0)

    pyramid = TokenPyramid(residuals, qcfg, schedule)
    if return_inputs:
        return pyramid, recon, consumed
    return pyramid, recon
