"""Three-variant ablation on synthetic walkers, one table per seed plus a paired summary.

    python scripts/run_ablation.py --seeds 0-4 --epochs 30
"""

import argparse

import numpy as np

from heatgait.evaluation import (
    DEFAULT_VARIANTS,
    DESK_FRAMES,
    DESK_SEQUENCES,
    DESK_SUBJECTS,
    ablation_run,
    desk_configs,
    emit_ablation,
)
from heatgait.synth import generate_corpus


def seed_range(text):
    lo, _, hi = text.partition("-")
    return list(range(int(lo), int(hi or lo) + 1))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=seed_range, default=seed_range("0-4"))
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--subjects", type=int, default=DESK_SUBJECTS)
    args = ap.parse_args()

    means = {v.name: [] for v in DEFAULT_VARIANTS}
    for seed in args.seeds:
        seqs = generate_corpus(args.subjects, DESK_SEQUENCES, DESK_FRAMES, seed=seed)
        model, train_cfg, data_cfg, aug_cfg = desk_configs(seed, epochs=args.epochs)
        rows = ablation_run(seqs, DEFAULT_VARIANTS, model, train_cfg, data_cfg, aug_cfg)
        print(f"seed {seed}")
        print(emit_ablation(rows), flush=True)
        for r in rows:
            means[r.name].append(r.mean)

    print("mean over seeds")
    for name, vals in means.items():
        print(f"  {name:45s} {np.mean(vals):5.1f}  (min {np.min(vals):5.1f}, max {np.max(vals):5.1f})")
    hop, poly = (means[DEFAULT_VARIANTS[2].name], means[DEFAULT_VARIANTS[1].name])
    wins = sum(h >= p for h, p in zip(hop, poly))
    print(f"hop extraction >= polynomial in {wins}/{len(hop)} paired seeds")


if __name__ == "__main__":
    main()
