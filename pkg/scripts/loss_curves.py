"""Train one teacher/student pair and write both loss curves as CSV.

    python scripts/loss_curves.py --profile full --types 1 --out results/curves
"""

import argparse
from pathlib import Path

from pfd_cardinality import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--profile", choices=sorted(bench.PROFILES), default="desk")
    ap.add_argument("--types", type=int, default=1)
    ap.add_argument("--alpha", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/curves")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = bench.PROFILES[args.profile](args.types, alpha=args.alpha, seed=args.seed)
    tp = bench.train_pipeline(cfg)
    tag = f"T{args.types}_alpha{args.alpha}_seed{args.seed}"
    bench.write_loss_curve(tp.teacher_history, out / f"teacher_{tag}.csv")
    bench.write_loss_curve(tp.student_history, out / f"student_{tag}.csv")
    print(f"teacher {tp.teacher_history.epochs} epochs, student {tp.student_history.epochs} "
          f"epochs; curves in {out}")


if __name__ == "__main__":
    main()
