"""Desk-scale MNIST trend trial over several seeds.

    python scripts/run_desk_mnist.py --seeds 0 1 2 --out runs/desk-mnist-trend.json
"""
import argparse
import json
import time

import numpy as np

from nbcverify.experiment import directional_trial


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--root", default="data/mnist5k")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--branch-budget", type=int, default=10)
    ap.add_argument("--out", default="runs/desk-mnist-trend.json")
    args = ap.parse_args()
    results = {}
    for seed in args.seeds:
        t0 = time.perf_counter()

        def show(name, row):
            extra = ""
            if "branches" in row:
                extra = (f" pgd={row['pgd100_acc']:.3f} median_branches={np.median(row['branches']):g}"
                         f" unsat={row['status'].count('UNSAT')}/{len(row['status'])}")
            print(f"seed {seed} {name:15s} acc={row['test_acc']:.3f} stable={row['stable_pct']:.1f}"
                  f"{extra} ({row['train_s']:.0f}s train)", flush=True)

        results[seed] = directional_trial(seed, args.root, args.epochs,
                                          branch_budget=args.branch_budget, progress=show)
        print(f"seed {seed} done in {time.perf_counter() - t0:.0f}s", flush=True)
    with open(args.out, "w") as fh:
        json.dump(results, fh, indent=1)


if __name__ == "__main__":
    main()
