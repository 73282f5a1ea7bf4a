"""Run the synthetic desk benchmark over several seeds for one or both aggregation modes.

    python scripts/desk_benchmark.py --seeds 0-9 --modes hop_extracted polynomial
"""

import argparse
import json
import time

from heatgait.evaluation import desk_run


def seed_range(text):
    lo, _, hi = text.partition("-")
    return list(range(int(lo), int(hi or lo) + 1))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=seed_range, default=seed_range("0-9"))
    ap.add_argument("--modes", nargs="+", default=["hop_extracted", "polynomial"])
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--json", action="store_true", help="one JSON object per run instead of text")
    args = ap.parse_args()
    for seed in args.seeds:
        for mode in args.modes:
            t0 = time.perf_counter()
            res, rep = desk_run(seed, mode, args.epochs)
            row = {"seed": seed, "mode": mode, "rank1": res.accuracy,
                   "nm": res.condition_accuracy("NM#5-6"), "bg": res.condition_accuracy("BG#1-2"),
                   "cl": res.condition_accuracy("CL#1-2"), "final_loss": rep.losses[-1],
                   "seconds": round(time.perf_counter() - t0, 1)}
            if args.json:
                print(json.dumps(row), flush=True)
            else:
                print(f"seed {seed:2d}  {mode:13s}  rank-1 {row['rank1']:5.1f}  "
                      f"NM {row['nm']:5.1f}  BG {row['bg']:5.1f}  CL {row['cl']:5.1f}  "
                      f"loss {row['final_loss']:.3f}  {row['seconds']}s", flush=True)


if __name__ == "__main__":
    main()
