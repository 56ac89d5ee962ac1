"""Teacher forcing vs bitwise self-correction on the toy task.

Trains matched model pairs over several seeds and reports held-out
generation quality as distance to the class manifold (MSE to the nearest
held-out sample of the conditioning class).  This is the experiment behind
acceptance criterion 10's second clause; expect the self-corrected model to
win most seeds.

Run: python scripts/train_bsc_comparison.py [--seeds 10] [--steps 300]
"""

import argparse
import time

import numpy as np
import torch

from bitpyramid.model import ModelConfig, NextScaleModel, TrainConfig, train_on_task
from bitpyramid.quantizer import QuantizerConfig, QuantizerKind
from bitpyramid.sampler import SamplerConfig, generate
from bitpyramid.schedule import TOY_TRAIN_ID, schedule_by_id
from bitpyramid.toydata import ToyTask, ToyTaskConfig

torch.set_num_threads(1)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--flip-p", type=float, default=0.3)
    args = ap.parse_args()

    task = ToyTask(ToyTaskConfig())
    sched = schedule_by_id(TOY_TRAIN_ID)
    qcfg = QuantizerConfig(QuantizerKind.BSQ, task.config.d)
    refs = {c: task.reference_pool(c) for c in range(1, task.config.num_classes + 1)}

    def train(seed, mode, flip):
        model = NextScaleModel(ModelConfig(
            hidden=32, heads=4, layers=2, bit_dim=task.config.d,
            cond_vocab=task.config.cond_vocab, max_scales=sched.K, rng_seed=seed))
        cfg = TrainConfig(mode=mode, steps=args.steps, batch_size=2, lr=2e-3,
                          optimizer="adam", max_flip_ratio=flip, seed=seed)
        train_on_task(model, task, sched, qcfg, cfg)
        return model

    def score(model, seed):
        vals = []
        for g in range(8):
            cls = 1 + g % task.config.num_classes
            _, F = generate(model, cls, sched,
                            SamplerConfig(temperature=1.0, rng_seed=1000 * seed + g),
                            qcfg)
            vals.append(task.manifold_mse(F, refs[cls]))
        return float(np.median(vals))

    wins = 0
    for seed in range(args.seeds):
        t0 = time.time()
        tf = score(train(seed, "teacher_forcing", 0.0), seed)
        bsc = score(train(seed, "bsc", args.flip_p), seed)
        win = bsc <= tf
        wins += win
        print(f"seed {seed}: teacher-forcing {tf:.5f}  self-corrected {bsc:.5f}  "
              f"{'WIN' if win else 'loss'}  ({time.time()-t0:.0f}s)")
    print(f"self-corrected wins {wins}/{args.seeds}")


if __name__ == "__main__":
    main()
