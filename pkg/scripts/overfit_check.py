#!/usr/bin/env python3
"""Capacity smoke test: drive a 16-sample synthetic set to near-zero loss."""
import argparse
import tempfile
import time

import numpy as np

from memattn import data as dat
from memattn import model as mdl
from memattn import train as trn


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--target", type=float, default=1e-3)
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as td:
        manifest, _ = dat.synth_dataset(16, td, seed=3, w=2, h=2, d=8, noise=0.0)
        records = []
        for split in dat.SPLITS:
            records += dat.load_split(manifest, td, split)
    cfg = mdl.ModelConfig(w=2, h=2, d=8, b=8, t=3, fm_hidden=8,
                          dropout_rate=0.0, dropout_z=0.0, seed=0)
    tcfg = trn.TrainConfig(batch_size=16, penalty_weight=0.0, weight_decay=0.0, seed=0)
    norm = trn.ScoreNorm.from_scores([r.score for r in records])
    params = mdl.init_params(cfg)
    opt = trn.AdamState(params.params())
    rng = np.random.default_rng(0)

    start = time.time()
    for step in range(1, args.steps + 1):
        loss = trn.train_epoch(records, params, opt, tcfg, norm, rng)
        if step % 100 == 0 or loss < args.target:
            print(f"step {step}: train loss {loss:.3e}")
        if loss < args.target:
            print(f"reached {args.target} in {step} steps, {time.time() - start:.1f}s")
            return
    print(f"did NOT reach {args.target} within {args.steps} steps")


if __name__ == "__main__":
    main()
