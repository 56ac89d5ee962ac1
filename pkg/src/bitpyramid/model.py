"""Compact next-scale transformer over bit-residual pyramids.

The token sequence is the scale-ordered queue a pyramid encoder emits: one
start token projected from the condition embedding, then every cell of the
downsampled reconstructions, segment by segment.  Attention is block-causal
(full within a scale segment, none forward), positions are rotary over each
segment's own 2D grid, and a learned per-scale embedding disambiguates
segments that would otherwise share positional treatment.  Output states go
through the per-bit classifier head; segment k's positions predict the bits
of scale k+1 (the start token predicts scale 1).

Everything runs in float64 on a single thread so fixed seeds give
bit-identical trajectories.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .correction import BscConfig, encode_with_bsc
from .errors import CheckpointError, ContractError, DivergenceError, RangeError
from .ivc import IvcHead
from .pyramid import encode
from .quantizer import QuantizerConfig
from .schedule import ScaleSchedule
from .toydata import NULL_CONDITION, ToyTask

torch.set_num_threads(1)  # reproducibility contract: fixed reduction order

DTYPE = torch.float64


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 64
    heads: int = 4
    layers: int = 2
    bit_dim: int = 16
    cond_vocab: int = 5          # toy classes + the reserved null id
    cond_len: int = 4
    cond_width: int = 32
    max_scales: int = 13
    ffn_mult: int = 4
    rope_base: float = 10000.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ContractError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if (self.hidden // self.heads) % 4:
            raise ContractError("head width must be divisible by 4 (two axes x sin/cos pairs)")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


def load_presets(path=None) -> dict:
    """Architecture presets (hidden/heads/layers) from a JSON config file.

    The packaged file carries the published scaling ladder; these are
    configuration data only, not sizes this repo trains.
    """
    import pathlib

    if path is None:
        path = pathlib.Path(__file__).with_name("model_presets.json")
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# sequence layout


def segment_ids(schedule: ScaleSchedule) -> np.ndarray:
    """Per-position segment index: 0 for the start token, then 1..K-1."""
    ids = [0]
    for j in range(1, schedule.K):
        h, w = schedule.scales[j]
        ids.extend([j] * (h * w))
    return np.asarray(ids, dtype=np.int64)


def block_causal_mask(schedule: ScaleSchedule) -> np.ndarray:
    """(S, S) bool; True where the query row may attend to the key column.

    Full attention within a segment, none to later segments; the start
    token is visible everywhere.
    """
    ids = segment_ids(schedule)
    return ids[None, :] <= ids[:, None]


def grid_positions(schedule: ScaleSchedule) -> np.ndarray:
    """(S, 2) raw integer (row, col) per token within its own scale grid."""
    pos = [(0, 0)]
    for j in range(1, schedule.K):
        h, w = schedule.scales[j]
        for m in range(h):
            for n in range(w):
                pos.append((m, n))
    return np.asarray(pos, dtype=np.int64)


@dataclass
class SequenceLayout:
    """Precomputed geometry of the scale-ordered token sequence."""

    schedule: ScaleSchedule
    seg_ids: np.ndarray
    positions: np.ndarray
    mask: torch.Tensor            # (S, S) bool
    segment_bounds: list          # (start, stop) per segment 0..K-1

    @classmethod
    def from_schedule(cls, schedule: ScaleSchedule) -> "SequenceLayout":
        if schedule.scales[0] != (1, 1):
            raise ContractError(
                "next-scale sequences need a (1, 1) first scale: the start "
                f"token predicts it, got {schedule.scales[0]}"
            )
        ids = segment_ids(schedule)
        bounds = []
        start = 0
        for j in range(schedule.K):
            n = 1 if j == 0 else schedule.scales[j][0] * schedule.scales[j][1]
            bounds.append((start, start + n))
            start += n
        return cls(
            schedule=schedule,
            seg_ids=ids,
            positions=grid_positions(schedule),
            mask=torch.from_numpy(block_causal_mask(schedule)),
            segment_bounds=bounds,
        )

    @property
    def length(self) -> int:
        return int(self.seg_ids.shape[0])

    def segment_slice(self, j: int) -> slice:
        a, b = self.segment_bounds[j]
        return slice(a, b)


def stack_inputs(inputs: list[np.ndarray]) -> np.ndarray:
    """Flatten the encoder's input queue into (S - 1, d) token rows."""
    if not inputs:
        return np.zeros((0, inputs[0].shape[-1] if inputs else 0))
    return np.concatenate([f.reshape(-1, f.shape[-1]) for f in inputs], axis=0)


def stack_labels(residuals: list[np.ndarray]) -> np.ndarray:
    """Flatten per-scale bit grids into (S, d) aligned with output positions."""
    return np.concatenate([r.reshape(-1, r.shape[-1]) for r in residuals], axis=0)


# ---------------------------------------------------------------------------
# rotary positions over 2D grids


def rope_tables(positions: np.ndarray, head_dim: int, base: float = 10000.0):
    """cos/sin tables for both axes; each axis rotates head_dim/4 pairs."""
    n_freq = head_dim // 4
    inv_freq = base ** (-np.arange(n_freq) / n_freq)
    ang_m = positions[:, 0:1] * inv_freq[None, :]
    ang_n = positions[:, 1:2] * inv_freq[None, :]
    ang = np.concatenate([ang_m, ang_n], axis=1)  # (S, head_dim/2)
    return (
        torch.from_numpy(np.cos(ang)).to(DTYPE),
        torch.from_numpy(np.sin(ang)).to(DTYPE),
    )


def apply_rope2d(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    """Rotate (..., S, head_dim): first half of pairs by the row angle
    series, second half by the column series.  Exact isometry per token."""
    half = x.shape[-1] // 2
    x1, x2 = x[..., :half], x[..., half:]
    return torch.cat([x1 * cos - x2 * sin, x1 * sin + x2 * cos], dim=-1)


def rope2d_rotate(
    x: torch.Tensor, positions: np.ndarray, base: float = 10000.0
) -> torch.Tensor:
    """Standalone rotation of (..., S, head_dim) vectors at integer (m, n)."""
    cos, sin = rope_tables(np.asarray(positions), x.shape[-1], base)
    return apply_rope2d(x, cos, sin)


# ---------------------------------------------------------------------------
# model


class _Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        h = cfg.hidden
        self.ln_self = nn.LayerNorm(h, dtype=DTYPE)
        self.wq = nn.Linear(h, h, dtype=DTYPE)
        self.wk = nn.Linear(h, h, dtype=DTYPE)
        self.wv = nn.Linear(h, h, dtype=DTYPE)
        self.wo = nn.Linear(h, h, dtype=DTYPE)
        self.ln_cross = nn.LayerNorm(h, dtype=DTYPE)
        self.cq = nn.Linear(h, h, dtype=DTYPE)
        self.ck = nn.Linear(cfg.cond_width, h, dtype=DTYPE)
        self.cv = nn.Linear(cfg.cond_width, h, dtype=DTYPE)
        self.co = nn.Linear(h, h, dtype=DTYPE)
        self.ln_ffn = nn.LayerNorm(h, dtype=DTYPE)
        self.ffn_in = nn.Linear(h, cfg.ffn_mult * h, dtype=DTYPE)
        self.ffn_out = nn.Linear(cfg.ffn_mult * h, h, dtype=DTYPE)
        self.heads = cfg.heads
        self.head_dim = cfg.head_dim

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, s, _ = x.shape
        return x.view(b, s, self.heads, self.head_dim).transpose(1, 2)

    def _merge(self, x: torch.Tensor) -> torch.Tensor:
        b, _, s, _ = x.shape
        return x.transpose(1, 2).reshape(b, s, self.heads * self.head_dim)

    def forward(self, x, cos_q, sin_q, mask_rows, cond_tokens, cache=None):
        """One block over the new rows `x`; cache holds earlier self-attn k/v."""
        xn = self.ln_self(x)
        q = apply_rope2d(self._split(self.wq(xn)), cos_q, sin_q)
        k = apply_rope2d(self._split(self.wk(xn)), cos_q, sin_q)
        v = self._split(self.wv(xn))
        if cache is not None:
            if cache.get("k") is not None:
                k = torch.cat([cache["k"], k], dim=2)
                v = torch.cat([cache["v"], v], dim=2)
            cache["k"], cache["v"] = k, v
        att = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        att = att.masked_fill(~mask_rows, float("-inf")).softmax(dim=-1)
        x = x + self.wo(self._merge(att @ v))

        xn = self.ln_cross(x)
        cq = self._split(self.cq(xn))
        ck = self._split(self.ck(cond_tokens))
        cv = self._split(self.cv(cond_tokens))
        catt = (cq @ ck.transpose(-1, -2) / math.sqrt(self.head_dim)).softmax(dim=-1)
        x = x + self.co(self._merge(catt @ cv))

        xn = self.ln_ffn(x)
        return x + self.ffn_out(nn.functional.gelu(self.ffn_in(xn)))


class NextScaleModel(nn.Module):
    """Block-causal next-scale predictor with a per-bit classifier head."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(cfg.rng_seed)
        self.cond_table = nn.Parameter(
            0.02 * torch.randn(cfg.cond_vocab, cfg.cond_len, cfg.cond_width,
                               dtype=DTYPE, generator=gen)
        )
        self.sos_proj = nn.Linear(cfg.cond_width, cfg.hidden, dtype=DTYPE)
        self.in_proj = nn.Linear(cfg.bit_dim, cfg.hidden, dtype=DTYPE)
        self.scale_emb = nn.Parameter(
            0.02 * torch.randn(cfg.max_scales, cfg.hidden, dtype=DTYPE, generator=gen)
        )
        self.blocks = nn.ModuleList(_Block(cfg) for _ in range(cfg.layers))
        self.ln_final = nn.LayerNorm(cfg.hidden, dtype=DTYPE)
        self.head = nn.Linear(cfg.hidden, cfg.bit_dim * 2, dtype=DTYPE)
        self._reinit(gen)

    def _reinit(self, gen: torch.Generator):
        for name, p in self.named_parameters():
            if name in ("cond_table", "scale_emb"):
                continue
            if p.dim() >= 2:
                with torch.no_grad():
                    p.copy_(0.02 * torch.randn(p.shape, dtype=DTYPE, generator=gen))
            elif "bias" in name:
                nn.init.zeros_(p)

    # -- embedding ---------------------------------------------------------

    def cond_tokens(self, cond_ids: torch.Tensor) -> torch.Tensor:
        return self.cond_table[cond_ids]

    def embed_rows(self, layout: SequenceLayout, token_rows: torch.Tensor,
                   cond_ids: torch.Tensor, start: int, stop: int) -> torch.Tensor:
        """Embedded inputs for absolute positions [start, stop).

        Row 0 is the start token (condition-derived); later rows are cell
        features through the input projection.  Every row receives its
        segment's scale embedding.
        """
        b = cond_ids.shape[0]
        parts = []
        if start == 0:
            pooled = self.cond_tokens(cond_ids).mean(dim=1)
            parts.append(self.sos_proj(pooled)[:, None, :])
            cell_rows = token_rows[:, 0 : stop - 1, :]
        else:
            cell_rows = token_rows[:, start - 1 : stop - 1, :]
        if cell_rows.shape[1]:
            parts.append(self.in_proj(cell_rows))
        x = torch.cat(parts, dim=1) if len(parts) > 1 else parts[0]
        seg = torch.from_numpy(layout.seg_ids[start:stop])
        return x + self.scale_emb[seg][None, :, :]

    # -- transformer -------------------------------------------------------

    def hidden_states(self, layout: SequenceLayout, token_rows: torch.Tensor,
                      cond_ids: torch.Tensor, upto_segment: int | None = None,
                      state: dict | None = None) -> torch.Tensor:
        """Final-norm hidden states.

        Without `state`: one full pass over segments [0, upto_segment],
        returning all positions.  With `state` (a dict persisting between
        calls): only the not-yet-processed segments are embedded and pushed
        through cached attention, returning just the new positions.
        """
        K = layout.schedule.K
        last = K - 1 if upto_segment is None else upto_segment
        stop = layout.segment_bounds[last][1]
        cos, sin = self._rope(layout)

        if state is None:
            x = self.embed_rows(layout, token_rows, cond_ids, 0, stop)
            mask = layout.mask[:stop, :stop]
            cond_tok = self.cond_tokens(cond_ids)
            for i, blk in enumerate(self.blocks):
                x = blk(x, cos[:stop], sin[:stop], mask, cond_tok)
            return self.ln_final(x)

        start = state.setdefault("next_pos", 0)
        if stop <= start:
            raise ContractError("generation state already past the requested segment")
        state.setdefault("layers", [{} for _ in self.blocks])
        cond_tok = state.get("cond_tok")
        if cond_tok is None:
            cond_tok = state["cond_tok"] = self.cond_tokens(cond_ids)
        x = self.embed_rows(layout, token_rows, cond_ids, start, stop)
        mask = layout.mask[start:stop, :stop]
        for i, blk in enumerate(self.blocks):
            x = blk(x, cos[start:stop], sin[start:stop], mask, cond_tok,
                    cache=state["layers"][i])
        state["next_pos"] = stop
        return self.ln_final(x)

    def _rope(self, layout: SequenceLayout):
        return rope_tables(layout.positions, self.cfg.head_dim, self.cfg.rope_base)

    def bit_logits(self, hidden: torch.Tensor) -> torch.Tensor:
        b = hidden.shape[:-1]
        return self.head(hidden).view(*b, self.cfg.bit_dim, 2)

    def forward(self, layout: SequenceLayout, token_rows: torch.Tensor,
                cond_ids: torch.Tensor) -> list[torch.Tensor]:
        """Teacher-forced pass: per-scale logits, element k is (B, h_k, w_k, d, 2)."""
        hidden = self.hidden_states(layout, token_rows, cond_ids)
        logits = self.bit_logits(hidden)
        out = []
        for k, (h, w) in enumerate(layout.schedule.scales):
            seg = logits[:, layout.segment_slice(k), :, :]
            out.append(seg.view(seg.shape[0], h, w, self.cfg.bit_dim, 2))
        return out

    def ivc_head(self) -> IvcHead:
        """The head's weights as the numpy per-bit classifier."""
        w = self.head.weight.detach().numpy().T.reshape(
            self.cfg.hidden, self.cfg.bit_dim, 2
        )
        b = self.head.bias.detach().numpy().reshape(self.cfg.bit_dim, 2)
        return IvcHead(w.copy(), b.copy())


# ---------------------------------------------------------------------------
# loss / training


def sequence_loss(per_scale_logits: list[torch.Tensor], labels: torch.Tensor,
                  layout: SequenceLayout):
    """Mean per-bit cross-entropy per scale, averaged over scales.

    Returns (loss, per-scale bit accuracy tensor).
    """
    losses, accs = [], []
    for k, logits in enumerate(per_scale_logits):
        b, h, w, d, _ = logits.shape
        tgt = labels[:, layout.segment_slice(k), :].reshape(-1)
        lg = logits.reshape(-1, 2)
        losses.append(nn.functional.cross_entropy(lg, tgt))
        accs.append((lg.argmax(dim=-1) == tgt).to(DTYPE).mean())
    return torch.stack(losses).mean(), torch.stack(accs)


@dataclass
class TrainConfig:
    mode: str = "teacher_forcing"          # or "bsc"
    steps: int = 2000
    batch_size: int = 4
    lr: float = 1e-3
    optimizer: str = "adam"                # "sgd" is the plain reference path
    max_flip_ratio: float = 0.3            # used in bsc mode
    uncond_prob: float = 0.1               # condition dropout for guidance training
    pool_size: int = 256                   # finite train pool (epoch-style reuse)
    seed: int = 0


def encode_batch(fields, conds, schedule, qcfg, mode, train_cfg, step, task_rng):
    """Inputs/labels for one batch under the chosen supervision mode."""
    rows, labels, cond_ids = [], [], []
    for i, (F, c) in enumerate(zip(fields, conds)):
        if mode == "bsc":
            sample_key = step * len(fields) + i
            pyr, inputs, _ = encode_with_bsc(
                F, schedule, qcfg,
                BscConfig(train_cfg.max_flip_ratio, train_cfg.seed),
                sample_index=sample_key,
            )
        elif mode == "teacher_forcing":
            pyr, inputs = encode(F, schedule, qcfg)
        else:
            raise RangeError(f"unknown training mode {mode!r}")
        rows.append(stack_inputs(inputs) if inputs else np.zeros((0, qcfg.d)))
        labels.append(stack_labels(pyr.residuals))
        if task_rng is not None and task_rng.random() < train_cfg.uncond_prob:
            c = NULL_CONDITION
        cond_ids.append(c)
    token_rows = torch.from_numpy(np.stack(rows)).to(DTYPE)
    label_t = torch.from_numpy(np.stack(labels)).long()
    return token_rows, label_t, torch.tensor(cond_ids, dtype=torch.long)


class Trainer:
    """One-step training transaction around a model and an optimizer."""

    def __init__(self, model: NextScaleModel, schedule: ScaleSchedule,
                 qcfg: QuantizerConfig, train_cfg: TrainConfig):
        if schedule.K > model.cfg.max_scales:
            raise ContractError("schedule longer than the model's scale table")
        self.model = model
        self.schedule = schedule
        self.layout = SequenceLayout.from_schedule(schedule)
        self.qcfg = qcfg
        self.cfg = train_cfg
        if train_cfg.optimizer == "adam":
            self.opt = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)
        elif train_cfg.optimizer == "sgd":
            self.opt = torch.optim.SGD(model.parameters(), lr=train_cfg.lr)
        else:
            raise RangeError(f"unknown optimizer {train_cfg.optimizer!r}")
        self.step_count = 0

    def step(self, fields, conds, mode: str | None = None):
        """(loss, per-scale accuracy) for one gradient update."""
        mode = mode or self.cfg.mode
        drop_rng = np.random.default_rng(
            np.random.SeedSequence(self.cfg.seed, spawn_key=(77, self.step_count))
        )
        token_rows, labels, cond_ids = encode_batch(
            fields, conds, self.schedule, self.qcfg, mode, self.cfg,
            self.step_count, drop_rng,
        )
        per_scale = self.model(self.layout, token_rows, cond_ids)
        loss, accs = sequence_loss(per_scale, labels, self.layout)
        if not torch.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {self.step_count}: {loss}")
        self.opt.zero_grad()
        loss.backward()
        self.opt.step()
        self.step_count += 1
        return float(loss.detach()), accs.detach().numpy()


def train_on_task(model: NextScaleModel, task: ToyTask, schedule: ScaleSchedule,
                  qcfg: QuantizerConfig, train_cfg: TrainConfig,
                  log_every: int = 0):
    """Deterministic training loop over the toy task's train split."""
    trainer = Trainer(model, schedule, qcfg, train_cfg)
    history = []
    for step in range(train_cfg.steps):
        rng = np.random.default_rng(np.random.SeedSequence(train_cfg.seed, spawn_key=(1, step)))
        idx = rng.integers(0, train_cfg.pool_size, size=train_cfg.batch_size)
        fields, conds = task.batch(idx, "train")
        loss, accs = trainer.step(fields, conds)
        history.append((loss, accs))
        if log_every and (step + 1) % log_every == 0:
            print(f"step {step + 1:5d}  loss {loss:.4f}  acc[:2] {accs[:2].mean():.4f}")
    return trainer, history


def bit_accuracy(model: NextScaleModel, task: ToyTask, schedule: ScaleSchedule,
                 qcfg: QuantizerConfig, indices, split: str = "heldout",
                 scales: tuple = (1, 2)) -> float:
    """Teacher-forced greedy bit accuracy over the requested scales."""
    layout = SequenceLayout.from_schedule(schedule)
    fields, conds = task.batch(indices, split)
    rows, labels = [], []
    for F in fields:
        pyr, inputs = encode(F, schedule, qcfg)
        rows.append(stack_inputs(inputs))
        labels.append(stack_labels(pyr.residuals))
    rows, labels = np.stack(rows), np.stack(labels)
    with torch.no_grad():
        per_scale = model(layout, torch.from_numpy(rows).to(DTYPE),
                          torch.tensor(conds, dtype=torch.long))
    correct = total = 0
    lab_t = torch.from_numpy(labels).long()
    for k in scales:
        logits = per_scale[k - 1].reshape(len(fields), -1, 2)
        tgt = lab_t[:, layout.segment_slice(k - 1), :].reshape(len(fields), -1)
        correct += int((logits.argmax(-1) == tgt).sum())
        total += tgt.numel()
    return correct / total


# ---------------------------------------------------------------------------
# checkpoint container

CKPT_MAGIC = b"BVCK"
CKPT_VERSION = 1


def save_checkpoint(path, model: NextScaleModel, extra: dict | None = None):
    """Versioned header + named float64 parameter blobs + checksum."""
    manifest = []
    blobs = []
    for name, p in sorted(model.state_dict().items()):
        arr = p.detach().numpy().astype("<f8")
        manifest.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps(
        {"config": asdict(model.cfg), "manifest": manifest, "extra": extra or {}},
        sort_keys=True,
    ).encode()
    body = CKPT_MAGIC + struct.pack("<HI", CKPT_VERSION, len(header)) + header + b"".join(blobs)
    digest = hashlib.blake2b(body, digest_size=8).digest()
    with open(path, "wb") as fh:
        fh.write(body + digest)


def load_checkpoint(path) -> tuple[NextScaleModel, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 10 or data[:4] != CKPT_MAGIC:
        raise CheckpointError("not a checkpoint container")
    body, digest = data[:-8], data[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch")
    version, hlen = struct.unpack("<HI", body[4:10])
    if version != CKPT_VERSION:
        raise CheckpointError(f"checkpoint version {version}, expected {CKPT_VERSION}")
    header = json.loads(body[10 : 10 + hlen].decode())
    cfg = ModelConfig(**header["config"])
    model = NextScaleModel(cfg)
    off = 10 + hlen
    state = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body[off : off + 8 * n], dtype="<f8").reshape(shape)
        state[entry["name"]] = torch.from_numpy(arr.copy())
        off += 8 * n
    if off != len(body):
        raise CheckpointError("checkpoint has trailing or missing blob bytes")
    model.load_state_dict(state)
    return model, header["extra"]
