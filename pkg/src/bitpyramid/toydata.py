"""Procedural fields, a class-conditional toy task, and toy images.

The canonical random field is piecewise smooth: a per-dimension background
constant on the residual code's representable lattice, a few flat-top
elliptical blobs stepping that lattice, and a little low-pass noise.  With
K coding scales of amplitude a, the representable constants are the K-parity
multiples of a in [-K a, K a]; drawing plateaus there mirrors features a
trained encoder would emit and gives the pyramid something it can actually
finish.  Calibration numbers for the committed thresholds live in
scripts/pilot_thresholds.py.

The class-conditional task reuses the same construction with the background
pattern and blob geometry fixed per class, so coarse-scale bits are
class-determined while fine scales carry sample noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .resample import resize_bilinear


def _lattice_background(rng: np.random.Generator, d: int, K: int, amp: float) -> np.ndarray:
    # K signs of +-amp sum to a K-parity multiple of amp
    offset = 1.0 if K % 2 else 0.0
    lev = rng.integers(-2, 3, size=d)
    return (2.0 * lev + offset) * amp


def _flat_blob(rng: np.random.Generator, h: int, w: int, skirt: float = 0.15) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = rng.uniform(2, h - 2), rng.uniform(2, w - 2)
    ry, rx = rng.uniform(2.5, 6.0), rng.uniform(2.5, 6.0)
    r = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
    prof = np.clip((1.2 - r) / skirt, 0.0, 1.0)
    return prof * prof * (3 - 2 * prof)  # smoothstep, flat top


def smooth_blob_field(
    rng: np.random.Generator,
    height: int = 16,
    width: int = 16,
    d: int = 16,
    levels: int = 7,
    n_blobs: int = 2,
    noise: float = 0.05,
    amplitude: float | None = None,
) -> np.ndarray:
    """Canonical smooth random field for a `levels`-scale +-a code.

    `amplitude` defaults to the spherical code amplitude 1/sqrt(d).
    """
    a = (1.0 / np.sqrt(d)) if amplitude is None else amplitude
    F = np.broadcast_to(_lattice_background(rng, d, levels, a), (height, width, d)).copy()
    for _ in range(n_blobs):
        prof = _flat_blob(rng, height, width)
        delta = 2.0 * a * rng.integers(-2, 3, size=d)
        F = F + prof[:, :, None] * delta[None, None, :]
    F = np.clip(F, -levels * a, levels * a)
    if noise > 0:
        F = F + noise * a * resize_bilinear(rng.standard_normal((4, 4, d)), (height, width))
    return F


NULL_CONDITION = 0  # reserved id for the unconditional branch


@dataclass(frozen=True)
class ToyTaskConfig:
    num_classes: int = 4
    height: int = 16
    width: int = 16
    d: int = 16
    levels: int = 5          # parity of the training schedule
    noise: float = 0.08      # sample noise in units of the code amplitude
    seed: int = 1234

    @property
    def cond_vocab(self) -> int:
        return self.num_classes + 1  # + null id


class ToyTask:
    """Deterministic class-conditional field sampler with a held-out split.

    The class fixes the per-dimension background pattern and the blob's
    amplitude signature, so the coarsest scales are class-determined.  The
    blob's position and size are jittered per sample: later scales can only
    be predicted by reading the realized geometry out of the earlier scales,
    which is what makes prefix corruption matter at all.
    """

    def __init__(self, config: ToyTaskConfig = ToyTaskConfig()):
        self.config = config
        self._class_params = {
            cls: self._build_class(cls) for cls in range(1, config.num_classes + 1)
        }
        self._clean = {
            cls: self._field(cls, jitter_rng=None) for cls in self._class_params
        }

    def _build_class(self, cls: int) -> dict:
        cfg = self.config
        a = 1.0 / np.sqrt(cfg.d)
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0, cls)))
        signs = np.where(rng.random(cfg.d) < 0.5, -1.0, 1.0)
        mags = np.where(rng.random(cfg.d) < 0.5, 3.0, 5.0)
        qy, qx = divmod((cls - 1) % 4, 2)
        return {
            "background": signs * mags * a,
            "delta": 2.0 * a * rng.integers(-2, 3, size=cfg.d),
            "center": (cfg.height * (0.25 + 0.5 * qy), cfg.width * (0.25 + 0.5 * qx)),
            "radius": 3.5,
        }

    def _field(self, cls: int, jitter_rng: np.random.Generator | None) -> np.ndarray:
        cfg = self.config
        a = 1.0 / np.sqrt(cfg.d)
        par = self._class_params[cls]
        cy, cx = par["center"]
        ry = rx = par["radius"]
        if jitter_rng is not None:
            cy += jitter_rng.uniform(-2.5, 2.5)
            cx += jitter_rng.uniform(-2.5, 2.5)
            ry *= jitter_rng.uniform(0.75, 1.3)
            rx *= jitter_rng.uniform(0.75, 1.3)
        F = np.broadcast_to(par["background"], (cfg.height, cfg.width, cfg.d)).copy()
        yy, xx = np.mgrid[0 : cfg.height, 0 : cfg.width]
        r = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
        prof = np.clip((1.2 - r) / 0.2, 0.0, 1.0)
        prof = prof * prof * (3 - 2 * prof)
        F = F + prof[:, :, None] * par["delta"][None, None, :]
        return np.clip(F, -cfg.levels * a, cfg.levels * a)

    def clean_field(self, cls: int) -> np.ndarray:
        """Canonical (unjittered, noiseless) field: the class manifold center."""
        return self._clean[cls]

    def sample(self, index: int, split: str = "train"):
        """(field, condition id) for a deterministic (split, index) key."""
        cfg = self.config
        a = 1.0 / np.sqrt(cfg.d)
        split_code = {"train": 1, "heldout": 2}[split]
        rng = np.random.default_rng(
            np.random.SeedSequence(cfg.seed, spawn_key=(split_code, index))
        )
        cls = 1 + index % cfg.num_classes
        F = self._field(cls, jitter_rng=rng)
        noise = cfg.noise * a * resize_bilinear(
            rng.standard_normal((4, 4, cfg.d)), (cfg.height, cfg.width)
        )
        return F + noise, cls

    def batch(self, indices, split: str = "train"):
        fields, conds = [], []
        for i in indices:
            F, c = self.sample(int(i), split)
            fields.append(F)
            conds.append(c)
        return fields, conds

    def nearest_class(self, F: np.ndarray) -> int:
        """Class whose clean field is closest in mean squared error."""
        errs = {
            cls: float(np.mean((F - clean) ** 2)) for cls, clean in self._clean.items()
        }
        return min(errs, key=errs.get)

    def reference_pool(self, cls: int, size: int = 24, split: str = "heldout"):
        """Held-out samples of one class, for manifold-distance evaluation."""
        idx = [i for i in range(size * self.config.num_classes)
               if 1 + i % self.config.num_classes == cls][:size]
        fields, _ = self.batch(idx, split)
        return np.asarray(fields)

    def manifold_mse(self, F: np.ndarray, refs: np.ndarray) -> float:
        """Distance to the class manifold: MSE to the nearest reference."""
        return float(np.min(np.mean((refs - F[None]) ** 2, axis=(1, 2, 3))))


def toy_image(rng: np.random.Generator, height: int = 64, width: int = 64) -> np.ndarray:
    """Smooth random RGB image in [0, 1] for codec round-trip experiments."""
    base = rng.uniform(0.15, 0.85, size=(4, 4, 3))
    img = resize_bilinear(base, (height, width))
    prof = _flat_blob(rng, height, width, skirt=0.3)
    tint = rng.uniform(-0.3, 0.3, size=3)
    img = img + prof[:, :, None] * tint[None, None, :]
    return np.clip(img, 0.0, 1.0)


def codec_matched_image(
    rng: np.random.Generator,
    d: int = 32,
    stride: int = 4,
    height: int = 64,
    width: int = 64,
    n_blobs: int = 2,
    levels: int = 7,
) -> np.ndarray:
    """Smooth blob image rendered at the feature codec's native resolution.

    Colors are constant per featurizer patch and sit on the pixel image of
    the residual code's representable palette (the toy-image analogue of
    smooth_blob_field), so encode/decode fidelity measures the quantizer
    rather than patch-averaging loss.
    """
    from .featurizer import FEATURE_GAIN, lift_assignment

    _, _, q = lift_assignment(d)
    unit = np.sqrt(q) / (FEATURE_GAIN * np.sqrt(d))  # pixel step per code step
    offset = 1.0 if levels % 2 else 0.0
    # keep colors inside [0, 1]: cap the lattice extent, preserving parity
    cap = min(levels, int(0.5 / unit))
    if (levels - cap) % 2:
        cap -= 1
    gh, gw = height // stride, width // stride
    lev = rng.integers(-2, 3, size=3)
    coarse = np.broadcast_to(0.5 + (2 * lev + offset) * unit, (gh, gw, 3)).copy()
    for _ in range(n_blobs):
        prof = _flat_blob(rng, gh, gw)
        delta = 2.0 * unit * rng.integers(-2, 3, size=3)
        coarse = coarse + prof[:, :, None] * delta[None, None, :]
    coarse = np.clip(coarse, 0.5 - cap * unit, 0.5 + cap * unit)
    return np.repeat(np.repeat(coarse, stride, axis=0), stride, axis=1)
