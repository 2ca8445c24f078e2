"""Homogeneous sweeps: trial budget, DTMC speed k (one reused model) and mixing ratio alpha.

    python scripts/homo_experiments.py --profile desk --out results/homo
"""

import argparse
from pathlib import Path

from pfd_cardinality import bench

SWEEPS = {
    "trial_length": dict(values=[50, 75, 100, 125]),
    "jumps_k": dict(values=[1, 2, 5, 10], reuse_model=True),
    "alpha": dict(values=[0.0, 0.1, 0.25, 0.5, 0.75, 1.0]),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--profile", choices=sorted(bench.PROFILES), default="desk")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--sweeps", nargs="+", choices=sorted(SWEEPS), default=list(SWEEPS))
    ap.add_argument("--out", default="results/homo")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs, frames = bench.EVAL_SCALE[args.profile]
    store = bench.ModelStore(out / "models")
    for name in args.sweeps:
        exp = bench.ExperimentConfig(bench.PROFILES[args.profile](1), name, runs=runs,
                                     frames=frames, seeds=args.seeds, **SWEEPS[name])
        rows = bench.run_experiment(
            exp, store, lambda v, s, m: print(f"{name}={v} seed={s} {m}", flush=True))
        bench.emit_results(rows, "csv", out / f"{name}.csv")
        header, table = bench.plot_table(rows)
        print(name, header)
        for line in table:
            print("  ", line)


if __name__ == "__main__":
    main()
