#!/usr/bin/env python3
"""How fast the window iteration settles under increasing oracle noise.

Runs the oracle-driven simulation at several noise levels on one synthetic
dataset and prints, per level, the cumulative share of test instances whose
global phase has reached a fixed point by each iteration.  No models are
trained; this isolates the window dynamics from the learning.
"""

import argparse
import dataclasses
import os

from rankwin.data import SyntheticSpec, generate_synthetic, save_dataset
from rankwin.experiments import (ExperimentManifest, file_digest,
                                 run_simulate)
from rankwin.windows import RankRange


def global_convergence_row(run_dir: str, max_iter: int) -> list[float]:
    pct = {}
    with open(os.path.join(run_dir, "convergence.csv")) as fh:
        for line in fh.read().strip().splitlines()[1:]:
            _, phase, it, _, cum = line.split(",")
            if phase == "global":
                pct[int(it)] = float(cum)
    return [pct.get(t, 0.0) for t in range(1, max_iter + 1)]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--work-dir", default="runs/convergence")
    parser.add_argument("--noise-levels", default="0,0.1,0.15,0.25",
                        help="comma list of oracle noise standard deviations")
    parser.add_argument("--n", type=int, default=4000)
    parser.add_argument("--scale", choices=("ari", "geo"), default="ari")
    parser.add_argument("--tau", type=float, default=3.0)
    parser.add_argument("--max-iter", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--data-seed", type=int, default=7)
    args = parser.parse_args()

    os.makedirs(args.work_dir, exist_ok=True)
    csv = os.path.join(args.work_dir, "dataset.csv")
    if not os.path.exists(csv):
        spec = SyntheticSpec(n=args.n, rank_domain=RankRange(1, 80),
                             seed=args.data_seed)
        save_dataset(generate_synthetic(spec), csv)
    base = ExperimentManifest(
        dataset_digest=file_digest(csv), domain_lo=1, domain_hi=80,
        scale_kind=args.scale, tau=args.tau, max_iter=args.max_iter,
        seed=args.seed)

    levels = [float(v) for v in args.noise_levels.split(",")]
    header = "noise   " + "".join(f"    t={t:<3d}" for t in range(1, args.max_iter + 1))
    print(header)
    for level in levels:
        manifest = dataclasses.replace(base, oracle_noise_std=level)
        run_dir = os.path.join(args.work_dir, f"noise_{level:g}")
        values = run_simulate(csv, manifest, run_dir)
        row = global_convergence_row(run_dir, args.max_iter)
        cells = "".join(f"  {pct:6.1f}%" for pct in row)
        print(f"{level:<8g}{cells}   mae {values['mae']:.3f}")
    print(f"per-level artifacts in {args.work_dir}/noise_*")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
