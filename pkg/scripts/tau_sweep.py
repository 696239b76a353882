#!/usr/bin/env python3
"""Grid the window half-width: one full train+eval per (scale, tau) cell.

The default grid covers geometric half-widths 0.05, 0.075, 0.1, and 0.125;
pass --cells to mix scales, e.g. "ari:2,ari:3,geo:0.1".  Each cell trains
from scratch, so cost scales linearly with the grid.  The aggregate CSV is
printed and left in the work directory alongside the per-cell runs.
"""

import argparse
import os

from rankwin.data import SyntheticSpec, generate_synthetic, save_dataset
from rankwin.experiments import (ExperimentManifest, file_digest, run_sweep)
from rankwin.windows import RankRange


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--work-dir", default="runs/tau_sweep")
    parser.add_argument("--cells", default="geo:0.05,geo:0.075,geo:0.1,geo:0.125")
    parser.add_argument("--n", type=int, default=4000)
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--data-seed", type=int, default=7)
    args = parser.parse_args()

    os.makedirs(args.work_dir, exist_ok=True)
    csv = os.path.join(args.work_dir, "dataset.csv")
    if not os.path.exists(csv):
        spec = SyntheticSpec(n=args.n, rank_domain=RankRange(1, 80),
                             seed=args.data_seed)
        save_dataset(generate_synthetic(spec), csv)
    cells = []
    for cell in args.cells.split(","):
        kind, tau = cell.split(":")
        cells.append((kind, float(tau)))
    base = ExperimentManifest(
        dataset_digest=file_digest(csv), domain_lo=1, domain_hi=80,
        epochs=args.epochs, triplets_per_instance=8, seed=args.seed)
    print(f"sweeping {len(cells)} cells, {args.epochs} epochs each")
    path = run_sweep(csv, args.work_dir, base, cells)
    with open(path) as fh:
        print(fh.read(), end="")
    print(f"grid written to {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
