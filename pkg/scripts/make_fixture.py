#!/usr/bin/env python3
"""Write synthetic labeled scan fixtures (.bin + .label pairs) to a directory.

Handy for exercising the cutmix and eval commands without real sensor data:

    python scripts/make_fixture.py --out /tmp/frames --frames 4 --points 20000
"""
import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from triview.pcio import save_kitti_bin, save_raw_labels
from triview.synth import synthetic_scan


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--frames", type=int, default=2)
    parser.add_argument("--points", type=int, default=20_000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--rare-clusters", type=int, default=3)
    args = parser.parse_args()

    scans = args.out / "scans"
    labels = args.out / "labels"
    scans.mkdir(parents=True, exist_ok=True)
    labels.mkdir(parents=True, exist_ok=True)
    for i in range(args.frames):
        cloud = synthetic_scan(
            args.points,
            seed=args.seed + i,
            labeled=True,
            rare_clusters=args.rare_clusters,
        )
        save_kitti_bin(cloud, scans / f"{i:06d}.bin")
        save_raw_labels(cloud.labels.astype("<u4"), labels / f"{i:06d}.label")
        print(f"frame {i:06d}: {cloud.num_points} points")
    print(f"wrote {args.frames} frame(s) under {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
