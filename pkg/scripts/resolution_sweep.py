#!/usr/bin/env python3
"""Sweep voxel resolution and report quantization statistics plus timings.

The voxel count at a given edge length is a direct proxy for how much
information survives quantization, while indexing time grows as the grid gets
finer; this script puts both on one table so the trade-off is visible:

    python scripts/resolution_sweep.py --points 120000
    python scripts/resolution_sweep.py --input scan.bin --resolutions 0.02,0.05,0.1,0.3
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from triview.index import collision_stats, voxelize
from triview.pcio import load_kitti_bin
from triview.synth import synthetic_scan


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--input", type=Path, help="scan .bin; synthetic when omitted")
    parser.add_argument("--points", type=int, default=120_000)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument(
        "--resolutions",
        type=lambda s: tuple(float(v) for v in s.split(",")),
        default=(0.02, 0.05, 0.1, 0.2, 0.3, 0.5),
    )
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    if args.input:
        cloud = load_kitti_bin(args.input)
    else:
        cloud = synthetic_scan(args.points, seed=args.seed)
    n = cloud.num_points
    print(f"{n} points; medians over {args.repeat} runs")
    print(f"{'r (m)':>8s} {'voxels':>9s} {'kept %':>8s} {'mean/bkt':>9s} {'max':>5s} {'multi %':>8s} {'time ms':>9s}")
    for res in args.resolutions:
        times = []
        for _ in range(args.repeat):
            start = time.perf_counter()
            index = voxelize(cloud, res)
            times.append((time.perf_counter() - start) * 1000.0)
        stats = collision_stats(index)
        print(
            f"{res:8.3f} {stats.occupied:9d} {100.0 * stats.occupied / n:8.2f} "
            f"{stats.mean_points:9.3f} {stats.max_points:5d} "
            f"{100.0 * stats.multi_fraction:8.2f} {float(np.median(times)):9.2f}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
