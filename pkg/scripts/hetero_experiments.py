"""Heterogeneous sweeps: 3-SS-BB block count at T=3 and the number of node types T.

    python scripts/hetero_experiments.py --profile desk --out results/hetero
"""

import argparse
from pathlib import Path

from pfd_cardinality import bench

SWEEPS = {
    "trial_length": dict(values=[75, 100, 125], num_types=3),
    "num_types": dict(values=[2, 3, 4, 6], num_types=2),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--profile", choices=sorted(bench.PROFILES), default="desk")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--sweeps", nargs="+", choices=sorted(SWEEPS), default=list(SWEEPS))
    ap.add_argument("--out", default="results/hetero")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs, frames = bench.EVAL_SCALE[args.profile]
    store = bench.ModelStore(out / "models")
    for name in args.sweeps:
        spec = dict(SWEEPS[name])
        pipeline = bench.PROFILES[args.profile](spec.pop("num_types"))
        exp = bench.ExperimentConfig(pipeline, name, runs=runs, frames=frames,
                                     seeds=args.seeds, **spec)
        rows = bench.run_experiment(
            exp, store, lambda v, s, m: print(f"{name}={v} seed={s} {m}", flush=True))
        bench.emit_results(rows, "csv", out / f"{name}.csv")


if __name__ == "__main__":
    main()
