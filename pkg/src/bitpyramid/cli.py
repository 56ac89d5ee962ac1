"""Command-line surface tying the library into runnable experiments.

Every subcommand exits nonzero on failure and emits one machine-readable
JSON error line on stderr; human-readable results go to stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import container
from .correction import BscConfig, encode_with_bsc, two_arm_study
from .errors import BitPyramidError, ContractError
from .featurizer import DEFAULT_STRIDE, featurize, render
from .ivc import conventional_param_count, ivc_param_count, savings_fraction
from .model import (
    ModelConfig,
    NextScaleModel,
    TrainConfig,
    bit_accuracy,
    load_checkpoint,
    load_presets,
    save_checkpoint,
    train_on_task,
)
from .pyramid import encode, reconstruct
from .quantizer import (
    QuantizerConfig,
    QuantizerKind,
    entropy_penalty_exact,
    entropy_penalty_factorized,
)
from .sampler import SamplerConfig, generate
from .schedule import (
    BSC_STUDY_ID,
    TOY_TRAIN_ID,
    load_schedule_file,
    registered_schedules,
    schedule_by_id,
    schedule_for,
)
from .toydata import ToyTask, ToyTaskConfig, smooth_blob_field

DEFAULT_SEED = int(os.environ.get("BITPYRAMID_SEED", "0"))


def _fail(kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return 1


def _load_image(path: str) -> np.ndarray:
    if path.endswith(".npy"):
        return np.load(path)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def _save_image(path: str, img: np.ndarray):
    tmp = f"{path}.tmp.{os.getpid()}"
    if path.endswith(".npy"):
        with open(tmp, "wb") as fh:
            np.save(fh, img)
    else:
        from PIL import Image

        arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
        fmt = "JPEG" if path.endswith((".jpg", ".jpeg")) else "PNG"
        Image.fromarray(arr).save(tmp, format=fmt)
    os.replace(tmp, path)


def _atomic_write(path: str, data: bytes):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _resolve_schedule(args, grid_shape=None):
    if getattr(args, "schedule_file", None):
        load_schedule_file(args.schedule_file)
    if getattr(args, "schedule_id", None) is not None:
        sched = schedule_by_id(args.schedule_id)
    else:
        sched = schedule_for(args.ratio)
    if getattr(args, "scales", None):
        sched = sched.truncated(args.scales)
    if grid_shape is not None and sched.final_scale != grid_shape:
        raise ContractError(
            f"schedule final scale {sched.final_scale} != feature grid {grid_shape}"
        )
    return sched


def _qcfg(args) -> QuantizerConfig:
    return QuantizerConfig(QuantizerKind[args.quantizer.upper()], args.d)


# -- subcommands -----------------------------------------------------------


def cmd_encode(args) -> int:
    img = _load_image(args.image)
    qcfg = _qcfg(args)
    F = featurize(img, qcfg.d, args.stride)
    sched = _resolve_schedule(args, F.shape[:2])
    if args.bsc_p is not None:
        pyr, _, _ = encode_with_bsc(F, sched, qcfg, BscConfig(args.bsc_p, args.seed))
        if args.bsc_p == 0.0:
            pyr.flip_trace = None  # degenerate trace; bytes match the plain path
    else:
        pyr, _ = encode(F, sched, qcfg)
    blob = container.serialize(pyr)
    _atomic_write(args.out, blob)
    print(f"wrote {args.out}: {len(blob)} bytes, {pyr.total_bits()} payload bits, "
          f"K={sched.K}, d={qcfg.d}")
    return 0


def cmd_decode(args) -> int:
    if getattr(args, "schedule_file", None):
        load_schedule_file(args.schedule_file)
    with open(args.container, "rb") as fh:
        pyr = container.deserialize(fh.read())
    img = render(reconstruct(pyr), args.stride)
    _save_image(args.out, img)
    print(f"wrote {args.out}: {img.shape[0]}x{img.shape[1]}, "
          f"from {pyr.K} scales at d={pyr.quantizer.d}")
    return 0


def cmd_roundtrip_report(args) -> int:
    img = _load_image(args.image)
    qcfg = _qcfg(args)
    F = featurize(img, qcfg.d, args.stride)
    sched = _resolve_schedule(args, F.shape[:2])
    pyr, _ = encode(F, sched, qcfg)
    norm = np.linalg.norm(F)
    print(f"{'scale':>5} {'grid':>9} {'bits':>8} {'rel feature err':>16} {'pixel rmse':>11}")
    ref = render(F, args.stride)
    for k in range(1, sched.K + 1):
        rec = reconstruct(pyr, k)
        rel = np.linalg.norm(F - rec) / norm
        prms = float(np.sqrt(np.mean((render(rec, args.stride) - ref) ** 2)))
        h, w = sched.scales[k - 1]
        print(f"{k:>5} {h:>4}x{w:<4} {h * w * qcfg.d:>8} {rel:>16.6f} {prms:>11.6f}")
    print(f"total bits: {pyr.total_bits()}  "
          f"({pyr.total_bits() / (img.shape[0] * img.shape[1]):.3f} bits/pixel)")
    return 0


def cmd_schedule_list(args) -> int:
    scheds = registered_schedules()
    if args.ratio is not None:
        scheds = [schedule_for(args.ratio)]
    elif not args.all:
        scheds = [s for s in scheds if 1 <= s.schedule_id <= 15]
    for s in scheds:
        scales = " ".join(f"({h},{w})" for h, w in s.scales)
        print(f"{s.aspect_ratio:.3f}  {s.resolution[0]}x{s.resolution[1]}  K={s.K}  {scales}")
    return 0


def cmd_params_report(args) -> int:
    rows = [(args.h, args.d)] if args.h else [(2048, 32), (2048, 16), (2048, 24), (2048, 64)]
    print(f"{'hidden':>7} {'d':>3} {'conventional (h*2^d)':>24} {'per-bit head (2hd)':>19} {'savings':>9}")
    for h, d in rows:
        conv = conventional_param_count(h, d)
        ivc = ivc_param_count(h, d)
        sav = savings_fraction(h, d)
        print(f"{h:>7} {d:>3} {conv:>24,} {ivc:>19,} {100 * sav:>8.3f}%")
    print("note: reported head counts exclude biases (add 2d each); published desk "
          "figures for a 2^16 vocabulary (0.65M vs 124M) imply a different head "
          "shape than 2hd / h*2^d and are not reproduced by these formulas.")
    return 0


def cmd_entropy_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    dims = [int(x) for x in args.dims.split(",")]
    print(f"{'d':>3} {'batch':>6} {'exact H[E]':>11} {'bound':>9} {'gap':>9} "
          f"{'t_exact':>9} {'t_factored':>11}")
    for d in dims:
        Z = rng.standard_normal((args.batch, d))
        cfg = QuantizerConfig(QuantizerKind.BSQ, d)
        t0 = time.perf_counter()
        fact = entropy_penalty_factorized(Z, cfg)
        t_f = time.perf_counter() - t0
        if d <= 16:
            t0 = time.perf_counter()
            ex = entropy_penalty_exact(Z, cfg)
            t_e = time.perf_counter() - t0
            gap = fact.marginal_code_entropy - ex.marginal_code_entropy
            print(f"{d:>3} {args.batch:>6} {ex.marginal_code_entropy:>11.6f} "
                  f"{fact.marginal_code_entropy:>9.6f} {gap:>9.2e} {t_e:>9.4f} {t_f:>11.4f}")
        else:
            print(f"{d:>3} {args.batch:>6} {'refused':>11} "
                  f"{fact.marginal_code_entropy:>9.4f} {'-':>9} {'-':>9} {t_f:>11.4f}")
    return 0


def cmd_train_toy(args) -> int:
    mode = {"tf": "teacher_forcing", "bsc": "bsc"}[args.mode]
    task = ToyTask(ToyTaskConfig(seed=args.data_seed))
    sched = schedule_by_id(TOY_TRAIN_ID)
    qcfg = QuantizerConfig(QuantizerKind.BSQ, task.config.d)
    arch = {"hidden": args.hidden, "heads": args.heads, "layers": args.layers}
    if args.preset:
        presets = load_presets(args.preset_file)
        if args.preset not in presets:
            raise ContractError(f"unknown preset {args.preset!r}; have {sorted(presets)}")
        arch.update(presets[args.preset])
    mcfg = ModelConfig(
        **arch,
        bit_dim=task.config.d, cond_vocab=task.config.cond_vocab,
        max_scales=sched.K, rng_seed=args.seed,
    )
    model = NextScaleModel(mcfg)
    tcfg = TrainConfig(mode=mode, steps=args.steps, batch_size=args.batch,
                       lr=args.lr, optimizer=args.optimizer,
                       max_flip_ratio=args.flip_p, seed=args.seed)
    train_on_task(model, task, sched, qcfg, tcfg, log_every=args.log_every)
    meta = {k: v for k, v in vars(args).items() if isinstance(v, (int, float, str, bool))}
    save_checkpoint(args.out, model, {"train": meta, "mode": mode})
    acc = bit_accuracy(model, task, sched, qcfg, range(64), "heldout", (1, 2))
    print(f"saved {args.out}; held-out bit accuracy (scales 1-2): {acc:.4f}")
    return 0


def cmd_eval_toy(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    task = ToyTask(ToyTaskConfig(seed=args.data_seed))
    sched = schedule_by_id(TOY_TRAIN_ID)
    qcfg = QuantizerConfig(QuantizerKind.BSQ, task.config.d)
    for scales in ((1, 2), tuple(range(1, sched.K + 1))):
        acc = bit_accuracy(model, task, sched, qcfg, range(args.samples), "heldout", scales)
        print(f"held-out bit accuracy scales {scales}: {acc:.4f}")
    refs = {c: task.reference_pool(c) for c in range(1, task.config.num_classes + 1)}
    mse = []
    hits = 0
    for seed in range(args.gen_samples):
        cls = 1 + seed % task.config.num_classes
        _, F = generate(model, cls, sched,
                        SamplerConfig(temperature=1.0, rng_seed=seed), qcfg)
        mse.append(task.manifold_mse(F, refs[cls]))
        hits += task.nearest_class(F) == cls
    print(f"held-out generation feature-MSE (class manifold): {np.median(mse):.5f}; "
          f"class match {hits}/{args.gen_samples}")
    return 0


def cmd_generate(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    if getattr(args, "schedule_file", None):
        load_schedule_file(args.schedule_file)
    if args.schedule_id:
        sched = schedule_by_id(args.schedule_id)
    elif args.ratio is not None:
        sched = schedule_for(args.ratio)
        if args.scales:
            sched = sched.truncated(args.scales)
    else:
        sched = schedule_by_id(TOY_TRAIN_ID)
    qcfg = QuantizerConfig(QuantizerKind[args.quantizer.upper()], model.cfg.bit_dim)
    value = args.cfg_value
    if ":" in str(value):
        a, b = str(value).split(":")
        value = (float(a), float(b))
    else:
        value = float(value)
    scfg = SamplerConfig(temperature=args.tau, cfg_mode=args.cfg_mode,
                         cfg_value=value, greedy=args.greedy, rng_seed=args.seed)
    pyr, F = generate(model, args.cond_id, sched, scfg, qcfg, use_cache=args.cache)
    if args.out_pyramid:
        _atomic_write(args.out_pyramid, container.serialize(pyr))
        print(f"wrote {args.out_pyramid}")
    if args.out_image:
        _save_image(args.out_image, render(F, args.stride))
        print(f"wrote {args.out_image}")
    print(f"generated K={sched.K} pyramid, {pyr.total_bits()} bits, "
          f"feature range [{F.min():.3f}, {F.max():.3f}]")
    return 0


def cmd_bsc_study(args) -> int:
    sched = schedule_by_id(BSC_STUDY_ID)
    d = args.d
    qcfg = QuantizerConfig(QuantizerKind.BSQ, d)
    rng = np.random.default_rng(args.seed)
    fields = [
        smooth_blob_field(rng, *sched.final_scale, d, levels=sched.K)
        for _ in range(args.trials)
    ]
    print(f"{'ratio':>6} {'corrected<=1.2x base':>21} {'corrected<naive':>16} {'both':>6}")
    for ratio in (float(r) for r in args.ratios.split(",")):
        res = two_arm_study(fields, sched, qcfg, ratio, flip_scale=args.flip_scale,
                            seed=args.seed)
        print(f"{ratio:>6.2f} {res.within_budget:>18}/{res.trials} "
              f"{res.beats_naive:>13}/{res.trials} {res.both:>3}/{res.trials}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bitpyramid",
                                description="bitwise multi-scale residual token pyramids")
    sub = p.add_subparsers(dest="command", required=True)

    def common_codec(sp):
        sp.add_argument("--d", type=int, default=32, help="bit dimension")
        sp.add_argument("--quantizer", choices=["lfq", "bsq"], default="bsq")
        sp.add_argument("--stride", type=int, default=DEFAULT_STRIDE)
        sp.add_argument("--ratio", type=float, default=1.0)
        sp.add_argument("--schedule-id", type=int, default=None)
        sp.add_argument("--scales", type=int, default=None,
                        help="truncate the schedule to its first K scales")
        sp.add_argument("--schedule-file", default=None,
                        help="JSON file registering custom schedules")

    sp = sub.add_parser("encode", help="image -> pyramid container")
    sp.add_argument("--image", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--bsc-p", type=float, default=None,
                    help="encode through the self-correction path with flip strength p")
    sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common_codec(sp)
    sp.set_defaults(fn=cmd_encode)

    sp = sub.add_parser("decode", help="pyramid container -> image")
    sp.add_argument("--container", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--stride", type=int, default=DEFAULT_STRIDE)
    sp.add_argument("--schedule-file", default=None)
    sp.set_defaults(fn=cmd_decode)

    sp = sub.add_parser("roundtrip-report", help="per-scale error curve and bit rate")
    sp.add_argument("--image", required=True)
    common_codec(sp)
    sp.set_defaults(fn=cmd_roundtrip_report)

    sp = sub.add_parser("schedule-list", help="print scale schedules")
    sp.add_argument("--ratio", type=float, default=None)
    sp.add_argument("--all", action="store_true", help="include registered customs")
    sp.set_defaults(fn=cmd_schedule_list)

    sp = sub.add_parser("params-report", help="classifier parameter accounting")
    sp.add_argument("--h", type=int, default=None)
    sp.add_argument("--d", type=int, default=32)
    sp.set_defaults(fn=cmd_params_report)

    sp = sub.add_parser("entropy-bench", help="exact vs factorized penalty gap and timing")
    sp.add_argument("--dims", default="4,8,10,16,64")
    sp.add_argument("--batch", type=int, default=4096)
    sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
    sp.set_defaults(fn=cmd_entropy_bench)

    sp = sub.add_parser("train-toy", help="train the toy next-scale model")
    sp.add_argument("--mode", choices=["tf", "bsc"], default="tf")
    sp.add_argument("--flip-p", type=float, default=0.3)
    sp.add_argument("--steps", type=int, default=2000)
    sp.add_argument("--batch", type=int, default=2)
    sp.add_argument("--lr", type=float, default=2e-3)
    sp.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    sp.add_argument("--hidden", type=int, default=32)
    sp.add_argument("--heads", type=int, default=4)
    sp.add_argument("--layers", type=int, default=2)
    sp.add_argument("--preset", default=None,
                    help="architecture preset name from the presets file")
    sp.add_argument("--preset-file", default=None)
    sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
    sp.add_argument("--data-seed", type=int, default=1234)
    sp.add_argument("--log-every", type=int, default=100)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train_toy)

    sp = sub.add_parser("eval-toy", help="held-out accuracy and generation quality")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--samples", type=int, default=64)
    sp.add_argument("--gen-samples", type=int, default=16)
    sp.add_argument("--data-seed", type=int, default=1234)
    sp.set_defaults(fn=cmd_eval_toy)

    sp = sub.add_parser("generate", help="sample a pyramid from a checkpoint")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--cond-id", type=int, default=1)
    sp.add_argument("--tau", type=float, default=1.0)
    sp.add_argument("--cfg-mode", choices=["none", "pyramid_logits", "logits", "features"],
                    default="none")
    sp.add_argument("--cfg-value", default="1.0",
                    help="guidance strength; start:end for the pyramid mode")
    sp.add_argument("--greedy", action="store_true")
    sp.add_argument("--cache", action="store_true", help="use KV caching")
    sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
    sp.add_argument("--schedule-id", type=int, default=None)
    sp.add_argument("--ratio", type=float, default=None,
                    help="pick a built-in schedule by aspect ratio instead")
    sp.add_argument("--scales", type=int, default=None)
    sp.add_argument("--schedule-file", default=None)
    sp.add_argument("--quantizer", choices=["lfq", "bsq"], default="bsq")
    sp.add_argument("--stride", type=int, default=DEFAULT_STRIDE)
    sp.add_argument("--out-pyramid", default=None)
    sp.add_argument("--out-image", default=None)
    sp.set_defaults(fn=cmd_generate)

    sp = sub.add_parser("bsc-study", help="two-arm self-correction compensation sweep")
    sp.add_argument("--ratios", default="0.1,0.2,0.3")
    sp.add_argument("--trials", type=int, default=32)
    sp.add_argument("--flip-scale", type=int, default=2)
    sp.add_argument("--d", type=int, default=16)
    sp.add_argument("--seed", type=int, default=7)
    sp.set_defaults(fn=cmd_bsc_study)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except BitPyramidError as exc:
        return _fail(exc.kind, str(exc))
    except FileNotFoundError as exc:
        return _fail("missing-file", str(exc))


if __name__ == "__main__":
    sys.exit(main())
