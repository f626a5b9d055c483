"""Command-line workflows: projection, voxel sweeps, fusion self-checks,
CutMix augmentation, evaluation, and micro-benchmarks.

Exit codes: 0 success, 1 failed data or self-checks, 2 usage/config errors,
3 missing or malformed input files.
"""
from __future__ import annotations

import argparse
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import augment, fusion, metrics, pcio, propagate, synth
from .config import RunConfig, apply_overrides, load_config, resolve_input
from .errors import MalformedFileError, UndefinedMetricError
from .index import collision_stats, spherical_project, voxelize


class CheckFailure(Exception):
    """A self-check or data validation failed; maps to exit code 1."""


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive value, got {text}")
    return value


def _id_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated ids, got {text!r}") from exc


def _resolution_list(text: str) -> tuple[float, ...]:
    return tuple(_positive_float(p) for p in text.split(",") if p.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="triview",
        description="Multi-view point cloud kernels: indexing, propagation, fusion, "
        "augmentation, and evaluation.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file")
    common.add_argument("--seed", type=int, help="rng seed (default 0)")
    common.add_argument("--threads", type=int, help="worker threads for per-frame loops")
    common.add_argument("--out", type=Path, help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", parents=[common], help="spherical range-image projection")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", type=Path, help="scan .bin file")
    src.add_argument("--synthetic", type=int, metavar="N", help="use a synthetic N-point scan")
    p.add_argument("--height", type=int, help="image rows (default 64)")
    p.add_argument("--width", type=int, help="image columns (default 2048)")
    p.add_argument("--fov-up", type=float, help="upper field of view, degrees (default 3)")
    p.add_argument("--fov-down", type=float, help="lower field of view, degrees (default -25)")
    p.add_argument("--max-range", type=_positive_float, default=80.0,
                   help="range normalizing the PGM depth (default 80 m)")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("voxelize", parents=[common], help="voxel occupancy sweep")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", type=Path)
    src.add_argument("--synthetic", type=int, metavar="N")
    p.add_argument("--resolutions", type=_resolution_list,
                   help="comma-separated voxel edge lengths (default 0.05,0.1,0.3)")
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("fuse-demo", parents=[common],
                       help="scatter/gather/fusion round trip with invariant checks")
    p.add_argument("--input", type=Path)
    p.add_argument("--synthetic", type=int, metavar="N", default=20000)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--resolution", type=_positive_float, default=0.1)
    p.add_argument("--inject-fault", action="store_true",
                   help="test hook: corrupt the fusion weights so checks fail")
    p.set_defaults(func=cmd_fuse_demo)

    p = sub.add_parser("cutmix", parents=[common], help="paste rare instances into frames")
    p.add_argument("--scans", type=Path, required=True, help="directory of .bin frames")
    p.add_argument("--labels", type=Path, required=True, help="directory of .label frames")
    p.add_argument("--rare", type=_id_list, help="raw ids of rare classes (default 11)")
    p.add_argument("--ground", type=_id_list, help="raw ids of ground classes (default 40)")
    p.add_argument("--paste-count", type=int, default=0, metavar="K")
    p.add_argument("--min-points", type=int, default=10)
    p.add_argument("--link-distance", type=_positive_float, default=0.5)
    p.add_argument("--margin", type=float, default=0.2)
    p.add_argument("--bank", type=Path, help="load a saved instance bank instead of mining")
    p.add_argument("--save-bank", type=Path, help="persist the mined bank to this directory")
    p.set_defaults(func=cmd_cutmix)

    p = sub.add_parser("eval", parents=[common], help="per-class IoU of predictions vs labels")
    p.add_argument("--pred", type=Path, required=True, help="directory of predicted .label files")
    p.add_argument("--gt", type=Path, required=True, help="directory of ground-truth .label files")
    p.add_argument("--label-map", type=Path, help="raw-to-train id map file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="kernel throughput micro-benchmark")
    p.add_argument("--input", type=Path)
    p.add_argument("--synthetic", type=int, metavar="N", default=120_000)
    p.add_argument("--resolution", type=_positive_float, default=0.05)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--repeat", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("selfcheck", parents=[common], help="run built-in invariant checks")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def _effective_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    return apply_overrides(
        cfg,
        seed=getattr(args, "seed", None),
        threads=getattr(args, "threads", None),
        out_dir=getattr(args, "out", None),
        range_h=getattr(args, "height", None),
        range_w=getattr(args, "width", None),
        fov_up_deg=getattr(args, "fov_up", None),
        fov_down_deg=getattr(args, "fov_down", None),
        voxel_resolutions=getattr(args, "resolutions", None),
    )


def _input_cloud(args, cfg: RunConfig) -> tuple[pcio.PointCloud, str]:
    if getattr(args, "input", None):
        path = resolve_input(args.input, cfg)
        return pcio.load_kitti_bin(path), Path(path).stem
    return synth.synthetic_scan(args.synthetic, cfg.seed), "synthetic"


def write_pgm(path, image: np.ndarray) -> None:
    """Binary PGM (P5, maxval 255): codec-free and byte-stable."""
    img = np.ascontiguousarray(image, dtype=np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


def cmd_project(args, cfg: RunConfig) -> int:
    cloud, stem = _input_cloud(args, cfg)
    rindex = spherical_project(
        cloud, cfg.range_h, cfg.range_w,
        math.radians(cfg.fov_up_deg), math.radians(cfg.fov_down_deg),
    )
    plan = propagate.scatter_plan(rindex)
    rho = np.sqrt((cloud.positions.astype(np.float64) ** 2).sum(axis=1))
    mean_range = propagate.scatter_average(rho[:, None], plan)[:, 0]
    flat_keys = rindex.pixel_keys.astype(np.int64)
    image = np.zeros(cfg.range_h * cfg.range_w, dtype=np.uint8)
    # Occupied pixels always render nonzero, however close the return.
    image[flat_keys] = np.clip(
        np.rint(mean_range / args.max_range * 255.0), 1, 255
    ).astype(np.uint8)
    dense = np.zeros((cfg.range_h * cfg.range_w, cloud.num_channels), dtype=np.float32)
    if rindex.num_pixels:
        dense[flat_keys] = propagate.scatter_average(
            cloud.features.astype(np.float32), plan
        )
    out_dir = cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    write_pgm(out_dir / f"{stem}.pgm", image.reshape(cfg.range_h, cfg.range_w))
    pcio.save_tensor(dense, out_dir / f"{stem}_features.bin")
    stats = collision_stats(rindex)
    print(
        f"projected {cloud.num_points} points -> {cfg.range_h}x{cfg.range_w}: "
        f"{stats.occupied} occupied pixels, multi fraction {stats.multi_fraction:.4f}"
    )
    print(f"wrote {out_dir / (stem + '.pgm')} and {out_dir / (stem + '_features.bin')}")
    return 0


def cmd_voxelize(args, cfg: RunConfig) -> int:
    cloud, _ = _input_cloud(args, cfg)
    resolutions = cfg.voxel_resolutions
    rows = []
    for res in resolutions:
        stats = collision_stats(voxelize(cloud, res))
        rows.append((res, stats))
    print(f"{'r (m)':>8s} {'voxels':>10s} {'mean/bucket':>12s} {'max':>6s} {'multi':>8s}")
    for res, stats in rows:
        print(
            f"{res:8.3f} {stats.occupied:10d} {stats.mean_points:12.3f} "
            f"{stats.max_points:6d} {stats.multi_fraction:8.4f}"
        )
    ordered = sorted(rows, key=lambda rs: rs[0])
    monotone = all(
        a[1].occupied >= b[1].occupied for a, b in zip(ordered, ordered[1:])
    )
    print(f"voxel count non-increasing with r: {'OK' if monotone else 'VIOLATED'}")
    if not monotone:
        raise CheckFailure("voxel count increased with coarser resolution")
    return 0


def _fusion_checks(cloud, cfg: RunConfig, channels: int, resolution: float,
                   inject_fault: bool = False) -> list[tuple[str, bool, str]]:
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    vindex = voxelize(cloud, resolution)
    rindex = spherical_project(
        cloud, cfg.range_h, cfg.range_w,
        math.radians(cfg.fov_up_deg), math.radians(cfg.fov_down_deg),
    )
    v_scatter = propagate.scatter_plan(vindex)
    r_scatter = propagate.scatter_plan(rindex)
    tri = propagate.trilinear_plan(vindex, cloud)
    bil = propagate.bilinear_plan(rindex)

    def round_trip(point_feats):
        view_v = propagate.gather(propagate.scatter_average(point_feats, v_scatter), tri)
        view_r = propagate.gather(propagate.scatter_average(point_feats, r_scatter), bil)
        return view_v, view_r

    feats = rng.uniform(-1.0, 1.0, (cloud.num_points, channels)).astype(np.float32)
    view_v, view_r = round_trip(feats)
    params = fusion.GateParams(
        tuple(rng.normal(0.0, 0.5, (3, channels)) for _ in range(3))
    )
    fused, cache = fusion.gated_fusion_forward([feats, view_v, view_r], params)
    softmax = cache.softmax
    if inject_fault:
        softmax = softmax.copy()
        softmax[0, 0] += 0.05
        fused = fused.copy()
        fused[0] += 10.0

    checks: list[tuple[str, bool, str]] = []
    row_err = float(np.abs(softmax.sum(axis=1) - 1.0).max())
    checks.append(("fusion weight rows sum to 1", row_err <= 1e-6, f"max |sum-1| = {row_err:.2e}"))

    stacked = np.stack([feats, view_v, view_r])
    low = stacked.min(axis=0) - 1e-6
    high = stacked.max(axis=0) + 1e-6
    convex = bool(((fused >= low) & (fused <= high)).all())
    checks.append(("fused output inside per-point view hull", convex, ""))

    ones = np.ones((cloud.num_points, channels), dtype=np.float32)
    const_v, const_r = round_trip(ones)
    valid = rindex.valid
    err_v = float(np.abs(const_v - 1.0).max()) if const_v.size else 0.0
    err_r = float(np.abs(const_r[valid] - 1.0).max()) if valid.any() else 0.0
    checks.append(
        ("constant field survives scatter/gather", max(err_v, err_r) <= 1e-6,
         f"max err = {max(err_v, err_r):.2e}")
    )
    const_fused, _ = fusion.gated_fusion_forward([ones, const_v, const_r], params)
    err_f = float(np.abs(const_fused[valid] - 1.0).max()) if valid.any() else 0.0
    checks.append(
        ("constant field survives gated fusion", err_f <= 1e-6, f"max err = {err_f:.2e}")
    )

    for name, plan, mask in (("trilinear", tri, None), ("bilinear", bil, valid)):
        sums = plan.effective_weights.sum(axis=1)
        if mask is not None:
            sums = sums[mask]
        err = float(np.abs(sums - 1.0).max()) if sums.size else 0.0
        checks.append((f"{name} gather weights sum to 1", err <= 1e-9, f"max err = {err:.2e}"))

    fused2, _ = fusion.gated_fusion_forward([feats, view_v, view_r], params)
    deterministic = bool(np.array_equal(fused2, fused))
    checks.append(("fusion output deterministic", deterministic, ""))
    return checks


def _report_checks(checks, label: str) -> int:
    failed = 0
    for name, ok, detail in checks:
        status = "PASS" if ok else "FAIL"
        suffix = f" ({detail})" if detail and not ok else ""
        print(f"{label} {name}: {status}{suffix}")
        failed += 0 if ok else 1
    if failed:
        raise CheckFailure(f"{failed} {label} check(s) failed")
    return 0


def cmd_fuse_demo(args, cfg: RunConfig) -> int:
    if args.input:
        cloud = pcio.load_kitti_bin(resolve_input(args.input, cfg))
    else:
        cloud = synth.synthetic_scan(args.synthetic, cfg.seed)
    checks = _fusion_checks(cloud, cfg, args.channels, args.resolution,
                            inject_fault=args.inject_fault)
    return _report_checks(checks, "check")


def _frame_pairs(scan_dir: Path, label_dir: Path) -> list[tuple[Path, Path]]:
    pairs = []
    for scan in sorted(scan_dir.glob("*.bin")):
        label = label_dir / f"{scan.stem}.label"
        if not label.exists():
            raise FileNotFoundError(f"no label file for {scan.name}: {label}")
        pairs.append((scan, label))
    if not pairs:
        raise FileNotFoundError(f"no .bin frames in {scan_dir}")
    return pairs


def _map_over_frames(worker, items, threads: int) -> list:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(worker, items))
    return [worker(item) for item in items]


def cmd_cutmix(args, cfg: RunConfig) -> int:
    rare = args.rare or (synth.RARE_LABEL,)
    ground = args.ground or (synth.GROUND_LABEL,)
    scan_dir = resolve_input(args.scans, cfg)
    label_dir = resolve_input(args.labels, cfg)
    pairs = _frame_pairs(Path(scan_dir), Path(label_dir))

    def load_frame(pair):
        scan_path, label_path = pair
        cloud = pcio.load_kitti_bin(scan_path)
        raw = pcio.load_raw_labels(label_path)
        if raw.shape[0] != cloud.num_points:
            raise CheckFailure(
                f"{label_path.name}: {raw.shape[0]} labels for {cloud.num_points} points"
            )
        semantic = (raw & np.uint32(0xFFFF)).astype(np.int32)
        return pcio.PointCloud(cloud.positions, cloud.features, semantic), raw

    if args.bank:
        bank = augment.InstanceBank.load(resolve_input(args.bank, cfg))
    else:
        mined: list[augment.Instance] = []
        for pair in pairs:
            labeled, _ = load_frame(pair)
            mined.extend(
                augment.extract_instances(
                    labeled, rare, min_points=args.min_points,
                    link_distance=args.link_distance,
                )
            )
        bank = augment.make_bank(mined, rare, ground)
    if args.save_bank:
        bank.save(args.save_bank)
        print(f"saved bank of {bank.total} instances to {args.save_bank}")
    if args.paste_count > 0 and bank.total == 0:
        raise CheckFailure("no instances mined; cannot paste")

    out_dir = cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    base_rng = augment.RngStream(cfg.seed)

    def process(indexed_pair):
        frame_index, (scan_path, label_path) = indexed_pair
        labeled, raw = load_frame((scan_path, label_path))
        rng = base_rng.for_frame(frame_index)
        augmented, summary = augment.instance_cutmix(
            labeled, bank, args.paste_count, rng, margin=args.margin
        )
        pcio.save_kitti_bin(augmented, out_dir / scan_path.name)
        pasted = augmented.labels[labeled.num_points:].astype("<u4")
        pcio.save_raw_labels(np.concatenate([raw, pasted]), out_dir / label_path.name)
        return f"{scan_path.stem}: placed {summary.placed} skipped {summary.skipped}"

    lines = _map_over_frames(process, list(enumerate(pairs)), cfg.threads)
    for line in sorted(lines):
        print(line)
    print(f"augmented {len(pairs)} frame(s) -> {out_dir}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    map_path = args.label_map or cfg.label_map
    if map_path is None:
        raise ValueError("eval needs --label-map or a label_map config entry")
    label_map = pcio.LabelMap.from_file(resolve_input(map_path, cfg))
    gt_dir = Path(resolve_input(args.gt, cfg))
    pred_dir = Path(resolve_input(args.pred, cfg))
    gt_files = sorted(gt_dir.glob("*.label"))
    if not gt_files:
        raise FileNotFoundError(f"no .label files in {gt_dir}")

    def tally(gt_path: Path) -> metrics.ConfusionMatrix:
        pred_path = pred_dir / gt_path.name
        if not pred_path.exists():
            raise FileNotFoundError(f"no prediction for {gt_path.name}")
        gt = pcio.load_kitti_labels(gt_path, label_map)
        pred = pcio.load_kitti_labels(pred_path, label_map)
        if gt.shape != pred.shape:
            raise CheckFailure(
                f"{gt_path.name}: {gt.shape[0]} labels vs {pred.shape[0]} predictions"
            )
        cm = metrics.ConfusionMatrix(label_map.num_classes, label_map.ignore_id)
        return cm.accumulate(gt, pred)

    shards = _map_over_frames(tally, gt_files, cfg.threads)
    total = shards[0]
    for shard in shards[1:]:
        total = total + shard
    result = metrics.miou(total)
    report = metrics.format_report(result)
    print(report, end="")
    out_dir = cfg.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(report, encoding="utf-8")
    (out_dir / "class_iou.txt").write_text(
        metrics.format_class_iou_lines(result), encoding="utf-8"
    )
    print(f"wrote {out_dir / 'report.txt'} and {out_dir / 'class_iou.txt'}")
    return 0


def _median_ms(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append((time.perf_counter() - start) * 1000.0)
    return float(np.median(times))


def cmd_bench(args, cfg: RunConfig) -> int:
    if args.input:
        cloud = pcio.load_kitti_bin(resolve_input(args.input, cfg))
    else:
        cloud = synth.synthetic_scan(args.synthetic, cfg.seed)
    n = cloud.num_points
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    feats = rng.uniform(-1.0, 1.0, (n, args.channels)).astype(np.float32)
    vindex = voxelize(cloud, args.resolution)
    rindex = spherical_project(
        cloud, cfg.range_h, cfg.range_w,
        math.radians(cfg.fov_up_deg), math.radians(cfg.fov_down_deg),
    )
    v_plan = propagate.scatter_plan(vindex)
    bil = propagate.bilinear_plan(rindex)
    pixel_feats = propagate.scatter_average(
        feats, propagate.scatter_plan(rindex)
    )
    timings = [
        ("voxelize", _median_ms(lambda: voxelize(cloud, args.resolution), args.repeat)),
        ("spherical_project", _median_ms(
            lambda: spherical_project(
                cloud, cfg.range_h, cfg.range_w,
                math.radians(cfg.fov_up_deg), math.radians(cfg.fov_down_deg)),
            args.repeat)),
        ("scatter_average", _median_ms(
            lambda: propagate.scatter_average(feats, v_plan), args.repeat)),
        ("bilinear_plan", _median_ms(lambda: propagate.bilinear_plan(rindex), args.repeat)),
        ("bilinear_gather", _median_ms(lambda: propagate.gather(pixel_feats, bil), args.repeat)),
    ]
    print(f"benchmark on {n} points, {args.channels} channels, median of {args.repeat} runs")
    for name, ms in timings:
        rate = n / (ms / 1000.0) if ms > 0 else float("inf")
        print(f"{name:>20s}  {ms:9.2f} ms  {rate:14.0f} pts/s")
    return 0


def _selfcheck_checks(cfg: RunConfig) -> list[tuple[str, bool, str]]:
    from .index import pack_voxel_cells, unpack_voxel_keys

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    checks: list[tuple[str, bool, str]] = []

    cells = rng.integers(-(1 << 20), 1 << 20, (5000, 3))
    ok = bool((unpack_voxel_keys(pack_voxel_cells(cells)) == cells).all())
    checks.append(("voxel key pack/unpack round trip", ok, ""))

    cloud = synth.synthetic_scan(5000, cfg.seed)
    vindex = voxelize(cloud, 0.3)
    order = np.sort(vindex.table.point_order)
    partition = bool((order == np.arange(cloud.num_points)).all())
    checks.append(("voxel buckets partition the points", partition, ""))

    x = rng.uniform(-1, 1, (64, 3))
    views = [x, rng.uniform(-1, 1, (64, 3))]
    fused, _ = fusion.gated_fusion_forward(views, fusion.GateParams.zeros(2, 3))
    reference = fusion.fuse_add(views) / 2.0
    checks.append(("zero-gate fusion equals the view mean", bool(np.array_equal(fused, reference)), ""))

    cm = metrics.ConfusionMatrix(2, ignore_id=255)
    cm.counts += np.array([[5, 5], [0, 10]])
    hand = metrics.miou(cm).miou
    checks.append(
        ("hand-checked mIoU case", abs(hand - (0.5 + 10.0 / 15.0) / 2.0) < 1e-12,
         f"got {hand:.9f}")
    )

    scene = synth.synthetic_scan(3000, cfg.seed + 1, labeled=True, rare_clusters=2)
    instances = augment.extract_instances(scene, (synth.RARE_LABEL,), min_points=10)
    bank = augment.make_bank(instances, (synth.RARE_LABEL,), (synth.GROUND_LABEL,))
    if bank.total:
        first, _ = augment.instance_cutmix(scene, bank, 2, augment.RngStream(cfg.seed))
        second, _ = augment.instance_cutmix(scene, bank, 2, augment.RngStream(cfg.seed))
        same = bool(
            np.array_equal(first.positions, second.positions)
            and np.array_equal(first.labels, second.labels)
        )
        checks.append(("cutmix deterministic for a fixed seed", same, ""))
    else:
        checks.append(("cutmix deterministic for a fixed seed", False, "no instances mined"))
    checks.extend(_fusion_checks(synth.synthetic_scan(4000, cfg.seed), cfg, 4, 0.1))
    return checks


def cmd_selfcheck(args, cfg: RunConfig) -> int:
    return _report_checks(_selfcheck_checks(cfg), "selfcheck")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _effective_config(args)
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args, cfg)
    except CheckFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (MalformedFileError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 3
    except (UndefinedMetricError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
