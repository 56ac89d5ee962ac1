"""Per-bit binary classification head over transformer hidden states.

Instead of one 2^d-way softmax (whose weight matrix is h * 2^d and already
passes a trillion parameters at d = 32), d independent two-way classifiers
share the hidden state: a single (h, d, 2) affine map.  Each bit's logits
are read off the last axis; loss and gradient are plain two-way
cross-entropy averaged over positions and bits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, RangeError


@dataclass
class IvcHead:
    """Affine map hidden -> (d, 2) logits; weight (h, d, 2), bias (d, 2)."""

    weight: np.ndarray
    bias: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def bit_dim(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def create(cls, hidden_dim: int, bit_dim: int, rng: np.random.Generator,
               scale: float = 0.02) -> "IvcHead":
        w = scale * rng.standard_normal((hidden_dim, bit_dim, 2))
        b = np.zeros((bit_dim, 2))
        return cls(w, b)

    def param_count(self, include_bias: bool = False) -> int:
        n = 2 * self.hidden_dim * self.bit_dim
        return n + 2 * self.bit_dim if include_bias else n


def bit_logits(hidden: np.ndarray, head: IvcHead) -> np.ndarray:
    """Apply the head over the last axis: (..., h) -> (..., d, 2).

    Classifier p only reads weight[:, p, :], so perturbing one classifier's
    parameters changes only that bit's logits.
    """
    hidden = np.asarray(hidden)
    if hidden.shape[-1] != head.hidden_dim:
        raise ContractError(
            f"hidden width {hidden.shape[-1]} != head hidden dim {head.hidden_dim}"
        )
    return np.tensordot(hidden, head.weight, axes=(-1, 0)) + head.bias


def _softmax2(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    return e / e.sum(axis=-1, keepdims=True)


def bitwise_ce_loss(logits: np.ndarray, target_bits: np.ndarray):
    """Mean two-way cross-entropy over all positions and bits.

    Returns (loss, grad) with grad = dloss/dlogits, the usual
    (softmax - onehot) / N form; N = number of (position, bit) terms so the
    loss magnitude is invariant to the grid size.
    """
    logits = np.asarray(logits, dtype=np.float64)
    target_bits = np.asarray(target_bits)
    if logits.shape[:-1] != target_bits.shape or logits.shape[-1] != 2:
        raise ContractError(
            f"logits shape {logits.shape} incompatible with targets {target_bits.shape}"
        )
    probs = _softmax2(logits)
    onehot = np.stack([1.0 - target_bits, target_bits.astype(np.float64)], axis=-1)
    n_terms = target_bits.size
    # clip only inside the log; the gradient stays exact
    p_true = np.take_along_axis(probs, target_bits[..., None].astype(np.int64), axis=-1)
    loss = float(-np.log(np.maximum(p_true, 1e-300)).sum() / n_terms)
    grad = (probs - onehot) / n_terms
    return loss, grad


def predict_bits(
    logits: np.ndarray,
    temperature: float | None = None,
    rng: np.random.Generator | None = None,
    greedy: bool = False,
) -> np.ndarray:
    """Bits from (..., d, 2) logits, greedy or sampled.

    Greedy takes the per-bit argmax (invariant to positive rescaling);
    sampling draws each bit from softmax(logits / temperature).
    """
    logits = np.asarray(logits, dtype=np.float64)
    if greedy:
        return (logits[..., 1] > logits[..., 0]).astype(np.uint8)
    if temperature is None or not temperature > 0:
        raise RangeError(f"sampling requires temperature > 0, got {temperature}")
    if rng is None:
        raise RangeError("sampling requires an explicit generator")
    probs = _softmax2(logits / temperature)
    return (rng.random(probs.shape[:-1]) < probs[..., 1]).astype(np.uint8)


def ivc_param_count(hidden_dim: int, bit_dim: int, include_bias: bool = False) -> int:
    """Headline parameter count of the per-bit head: 2 * h * d (bias separate)."""
    if hidden_dim < 1 or bit_dim < 1:
        raise RangeError("dimensions must be >= 1")
    n = 2 * hidden_dim * bit_dim
    return n + 2 * bit_dim if include_bias else n


def conventional_param_count(hidden_dim: int, bit_dim: int) -> int:
    """Weight count of a flat 2^d-way classifier: h * 2^d, exact big integer."""
    if hidden_dim < 1 or bit_dim < 1:
        raise RangeError("dimensions must be >= 1")
    return hidden_dim * (2 ** bit_dim)


def savings_fraction(hidden_dim: int, bit_dim: int) -> float:
    """1 - IVC/conventional, computed exactly before the float division."""
    conv = conventional_param_count(hidden_dim, bit_dim)
    ivc = ivc_param_count(hidden_dim, bit_dim)
    from fractions import Fraction

    return float(1 - Fraction(ivc, conv))
