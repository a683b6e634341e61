"""Sufficient-decrease audit of capped full-batch FOSGD on a quadratic.

Writes one CSV row per step and alpha: f before/after, squared gradient
norm, step size, decrease coefficient and slack (negative means the
inequality holds with room to spare).

    python scripts/decrease_audit.py --out audit.csv
"""

import argparse
import csv
import sys

from fracfed.analysis import audit_decrease, stationarity_report
from fracfed.numerics import FracConfig
from fracfed.objectives import Quadratic
from fracfed.optimizers import run_fosgd


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.5, 0.8, 0.97, 1.0])
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--mu0", type=float, default=0.4)
    ap.add_argument("--delta", type=float, default=1.0)
    ap.add_argument("--diag", type=float, nargs="+", default=[4.0, 1.0])
    ap.add_argument("--out", default="-", help="CSV path, '-' for stdout")
    args = ap.parse_args()

    obj = Quadratic.diagonal(args.diag)
    cap = 2.0 / obj.smoothness()
    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["alpha", "t", "f_before", "f_after", "grad_norm_sq", "alpha_t", "kappa_t", "slack", "ok"])
    summary = []
    for alpha in args.alphas:
        cfg = FracConfig(alpha, mu0=args.mu0, delta=args.delta, cap=cap)
        traj = run_fosgd(obj, [1.0] * obj.dim, cfg, args.steps)
        audits = audit_decrease(traj, obj, cfg)
        for a in audits:
            writer.writerow([alpha, a.t, repr(a.f_before), repr(a.f_after), repr(a.grad_norm_sq),
                             repr(a.alpha_t), repr(a.kappa_t), repr(a.slack), int(a.ok)])
        rep = stationarity_report(traj.grad_norms)
        summary.append((alpha, sum(not a.ok for a in audits), rep.first_below))
    if fh is not sys.stdout:
        fh.close()
    for alpha, bad, first in summary:
        hits = ", ".join(f"<{k:g} at t={v}" for k, v in first.items())
        print(f"alpha={alpha}: {bad} violations; {hits}", file=sys.stderr)


if __name__ == "__main__":
    main()
