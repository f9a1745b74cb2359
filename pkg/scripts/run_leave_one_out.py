"""Held-out-client generalization: train on M-1 clients, test on the last.

For every (algorithm, seed) pair this trains a federation without the
held-out client and reports how well the final global model transfers to
it, alongside the in-federation accuracy (their difference is the
participation gap).
"""

import argparse

import numpy as np

from fedfa.config import ExperimentConfig
from fedfa.experiment import leave_one_out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--algorithms", nargs="+", default=["fedavg", "fedfa"])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--held-out", type=int, default=3,
                    help="client index excluded from training")
    ap.add_argument("--rounds", type=int, default=30)
    ap.add_argument("--run-root", default=None,
                    help="also write per-run artifacts here")
    args = ap.parse_args()

    print(f"held-out client: {args.held_out}")
    print("algorithm  seed  held_out_acc  in_fed_acc  gap")
    means = {}
    for algo in args.algorithms:
        rows = []
        for seed in args.seeds:
            cfg = ExperimentConfig(algorithm=algo, seed=seed,
                                   rounds=args.rounds)
            out = leave_one_out(cfg, args.held_out, run_root=args.run_root)
            rows.append(out)
            print(f"{algo:9s}  {seed:4d}  {out['held_out_acc']:.4f}        "
                  f"{out['in_federation_acc']:.4f}      "
                  f"{out['participation_gap']:+.4f}")
        means[algo] = (np.mean([r["held_out_acc"] for r in rows]),
                       np.mean([r["participation_gap"] for r in rows]))

    print()
    for algo, (acc, gap) in means.items():
        print(f"{algo:9s}  mean held-out acc {acc:.4f}, mean gap {gap:+.4f}")


if __name__ == "__main__":
    main()
