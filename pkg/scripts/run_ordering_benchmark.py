"""Multi-seed comparison of augmentation variants against the baselines.

Runs each (algorithm, seed) pair on the default feature-shift task, prints
a per-seed accuracy table, and leaves full run directories plus a summary
CSV/SVG under the run root.
"""

import argparse
import json
import os

import numpy as np

from fedfa.config import ExperimentConfig
from fedfa.experiment import run_experiment
from fedfa.report import emit_report

DEFAULT_ALGOS = ["fedavg", "fedprox", "fedavgm", "mixup",
                 "fedfa", "fedfa-c", "fedfa-r"]


def final_acc(run_dir):
    with open(os.path.join(run_dir, "metrics.jsonl")) as f:
        return json.loads(f.readlines()[-1])["mean_test_acc"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--algorithms", nargs="+", default=DEFAULT_ALGOS)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--rounds", type=int, default=30)
    ap.add_argument("--run-root", default="runs/ordering")
    args = ap.parse_args()

    table = {}
    for algo in args.algorithms:
        for seed in args.seeds:
            cfg = ExperimentConfig(algorithm=algo, seed=seed,
                                   rounds=args.rounds)
            run_dir = run_experiment(cfg, run_root=args.run_root)
            table[(algo, seed)] = final_acc(run_dir)
            print(f"  {algo:8s} seed {seed}: {table[(algo, seed)]:.4f}")

    print()
    header = "algorithm | " + " ".join(f"s{s:<6d}" for s in args.seeds) + "| mean"
    print(header)
    print("-" * len(header))
    for algo in args.algorithms:
        accs = [table[(algo, s)] for s in args.seeds]
        row = " ".join(f"{a:.4f} " for a in accs)
        print(f"{algo:9s} | {row}| {np.mean(accs):.4f}")

    csv_path, svg_path, warnings = emit_report(args.run_root)
    for w in warnings:
        print(f"warning: {w}")
    print(f"\nwrote {csv_path} and {svg_path}")


if __name__ == "__main__":
    main()
