"""Rounds to 60% test accuracy under a severe label-skew split.

Runs FedAvg and FOFedAvg (alpha in {0.6, 0.97}) on 10-class synthetic
blobs split across 10 clients with at most two classes each, and prints
rounds-to-target per seed plus the mean over seeds.

    python scripts/nonid_speedup.py --seeds 0-9
"""

import argparse
import statistics

from fracfed.federation import FedConfig, rounds_to_target, run_federation
from fracfed.numerics import FracConfig
from fracfed.objectives import LogReg
from fracfed.partition import partition, severity_preset, synth_classification, train_test_split


def seed_range(text):
    lo, _, hi = text.partition("-")
    return list(range(int(lo), int(hi or lo) + 1))


def run(seed, args, alpha=None):
    ds = synth_classification(args.n, args.p, 10, args.class_sep, seed)
    train, test = train_test_split(ds, 0.2, seed)
    shards = partition(train, severity_preset("severe", 10, 10), seed)
    common = dict(K=10, C=0.2, E=args.E, B=args.B, rounds=args.rounds, target_accuracy=args.target)
    if alpha is None:
        cfg = FedConfig("fedavg", eta=args.mu0, **common)
    else:
        cfg = FedConfig("fofedavg", frac=FracConfig(alpha, args.mu0, args.delta), **common)
    recs = run_federation(LogReg(train), shards, cfg, seed, test=test)
    return rounds_to_target(recs, args.target), recs[-1].test_accuracy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=seed_range, default=seed_range("0-9"))
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--p", type=int, default=20)
    ap.add_argument("--class-sep", type=float, default=3.0)
    ap.add_argument("--E", type=int, default=5)
    ap.add_argument("--B", type=int, default=32)
    ap.add_argument("--mu0", type=float, default=0.1)
    ap.add_argument("--delta", type=float, default=1e-5)
    ap.add_argument("--rounds", type=int, default=60)
    ap.add_argument("--target", type=float, default=0.6)
    args = ap.parse_args()

    arms = {"fedavg": None, "fofedavg-0.6": 0.6, "fofedavg-0.97": 0.97}
    table = {name: [] for name in arms}
    print("seed " + " ".join(f"{name:>16}" for name in arms))
    for seed in args.seeds:
        cells = []
        for name, alpha in arms.items():
            r, acc = run(seed, args, alpha)
            table[name].append(r)
            cells.append(f"{str(r):>6} ({acc:.3f})")
        print(f"{seed:>4} " + " ".join(f"{c:>16}" for c in cells))
    print("mean rounds to target (runs that reached it):")
    for name, rs in table.items():
        hit = [r for r in rs if r is not None]
        mean = f"{statistics.fmean(hit):.2f}" if hit else "n/a"
        print(f"  {name:<14} {mean}  ({len(hit)}/{len(rs)} reached)")


if __name__ == "__main__":
    main()
