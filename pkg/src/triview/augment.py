"""Training-time augmentation: rare-instance pasting and global scale/rotate.

Rare-class object instances are mined from labeled frames by single-linkage
grouping, stored recentred in a bank, and pasted back into scenes above
ground-labeled points with a random rotation and scale. Every operation is a
pure function of its inputs and the seeded stream, so identical seeds replay
identical outputs bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MalformedFileError
from .pcio import PointCloud, load_tensor, save_tensor

_MASK64 = (1 << 64) - 1
_GOLDEN64 = 0x9E3779B97F4A7C15


def _splitmix64(value: int) -> int:
    z = value & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass
class RngStream:
    """Seeded PCG64 stream with a defined draw sequence.

    Identical seeds yield identical draws; :meth:`for_frame` derives an
    independent child stream per frame index so frames can be processed in
    parallel without coupling their outputs.
    """

    seed: int
    algorithm = "pcg64"
    gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def for_frame(self, frame_index: int) -> "RngStream":
        mixed = _splitmix64(self.seed ^ ((frame_index + 1) * _GOLDEN64))
        return RngStream(mixed)


@dataclass(frozen=True)
class Instance:
    """A recentred rare-class object: xy centroid at the origin, min z at 0.

    The constructor recentres whatever points it is given, so the invariant
    holds by construction (up to storage rounding of the inputs).
    """

    class_id: int
    points: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"instance points must be (K, 3) with K >= 1, got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("instance points must be finite")
        pts[:, 0] -= pts[:, 0].mean()
        pts[:, 1] -= pts[:, 1].mean()
        pts[:, 2] -= pts[:, 2].min()
        pts.setflags(write=False)
        feat = np.array(self.features, copy=True)
        if feat.ndim != 2 or feat.shape[0] != pts.shape[0]:
            raise ValueError(f"instance features must be (K, C), got {feat.shape}")
        feat.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "features", feat)

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    @property
    def radius(self) -> float:
        """Largest xy distance from the centroid (bounding circle radius)."""
        return float(np.sqrt((self.points[:, :2] ** 2).sum(axis=1)).max())


@dataclass(frozen=True)
class InstanceBank:
    """Per-class pools of instances plus the class sets driving cutmix."""

    by_class: dict[int, tuple[Instance, ...]]
    rare_classes: frozenset[int]
    ground_classes: frozenset[int]

    def __post_init__(self):
        for cls, instances in self.by_class.items():
            if cls not in self.rare_classes:
                raise ValueError(f"bank class {cls} is not in rare_classes")
            for inst in instances:
                if inst.class_id != cls:
                    raise ValueError(f"instance of class {inst.class_id} filed under {cls}")

    @property
    def classes(self) -> list[int]:
        return sorted(cls for cls, lst in self.by_class.items() if lst)

    @property
    def total(self) -> int:
        return sum(len(v) for v in self.by_class.values())

    def save(self, directory) -> None:
        """Persist as per-instance tensor files plus a manifest.

        The manifest starts with a ``ground <ids...>`` line, then one
        ``<class_id> <filename>`` line per instance; each tensor file is
        (K, 3 + C) float32 with positions first.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        lines = ["ground " + " ".join(str(c) for c in sorted(self.ground_classes))]
        counter = 0
        for cls in sorted(self.by_class):
            for inst in self.by_class[cls]:
                name = f"inst_{counter:05d}.bin"
                save_tensor(np.hstack([inst.points, inst.features]), directory / name)
                lines.append(f"{cls} {name}")
                counter += 1
        (directory / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "InstanceBank":
        directory = Path(directory)
        manifest = directory / "manifest.txt"
        if not manifest.exists():
            raise MalformedFileError(f"{directory}: missing manifest.txt")
        lines = [ln for ln in manifest.read_text(encoding="utf-8").splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("ground"):
            raise MalformedFileError(f"{manifest}: first line must list ground classes")
        ground = frozenset(int(v) for v in lines[0].split()[1:])
        by_class: dict[int, list[Instance]] = {}
        for line in lines[1:]:
            cls_str, name = line.split()
            combined = load_tensor(directory / name)
            if combined.shape[1] < 3:
                raise MalformedFileError(f"{name}: instance tensor needs >= 3 columns")
            inst = Instance(int(cls_str), combined[:, :3], combined[:, 3:])
            by_class.setdefault(int(cls_str), []).append(inst)
        return cls(
            by_class={k: tuple(v) for k, v in by_class.items()},
            rare_classes=frozenset(by_class),
            ground_classes=ground,
        )


def make_bank(instances, rare_classes, ground_classes) -> InstanceBank:
    by_class: dict[int, list[Instance]] = {}
    for inst in instances:
        by_class.setdefault(inst.class_id, []).append(inst)
    return InstanceBank(
        by_class={k: tuple(v) for k, v in by_class.items()},
        rare_classes=frozenset(rare_classes),
        ground_classes=frozenset(ground_classes),
    )


class _UnionFind:
    def __init__(self, size: int):
        self.parent = list(range(size))

    def find(self, a: int) -> int:
        parent = self.parent
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _single_linkage(points: np.ndarray, link_distance: float) -> list[np.ndarray]:
    """Connected components under "some pair within link_distance" chaining.

    Candidate pairs come from a grid of cell size ``link_distance``: any two
    points closer than the threshold necessarily share a cell or sit in
    adjacent cells, so only those pairs are distance-checked.
    """
    count = points.shape[0]
    uf = _UnionFind(count)
    cells = np.floor(points / link_distance).astype(np.int64)
    grid: dict[tuple[int, int, int], list[int]] = {}
    for i, cell in enumerate(map(tuple, cells)):
        grid.setdefault(cell, []).append(i)
    limit = link_distance * link_distance
    offsets = [
        (dx, dy, dz)
        for dx in (-1, 0, 1)
        for dy in (-1, 0, 1)
        for dz in (-1, 0, 1)
        if (dx, dy, dz) >= (0, 0, 0)
    ]
    for cell, ids in grid.items():
        base = points[ids]
        for off in offsets:
            neighbor = (cell[0] + off[0], cell[1] + off[1], cell[2] + off[2])
            other = grid.get(neighbor)
            if other is None:
                continue
            diff = base[:, None, :] - points[other][None, :, :]
            close = (diff * diff).sum(axis=2) <= limit
            for a, b in zip(*np.nonzero(close)):
                uf.union(ids[a], other[b])
    roots: dict[int, list[int]] = {}
    for i in range(count):
        roots.setdefault(uf.find(i), []).append(i)
    return [np.asarray(roots[r], dtype=np.int64) for r in sorted(roots)]


def extract_instances(
    cloud: PointCloud, rare_classes, min_points: int = 10, link_distance: float = 0.5
) -> list[Instance]:
    """Mine rare-class instances from a labeled frame.

    Points of each rare class are chained into single-linkage components at
    ``link_distance``; components with at least ``min_points`` members become
    recentred instances. Ordering is deterministic: classes ascending, then
    components by their smallest point index.
    """
    if cloud.labels is None:
        raise ValueError("instance extraction needs per-point labels")
    if link_distance <= 0:
        raise ValueError("link_distance must be positive")
    out: list[Instance] = []
    for cls in sorted(set(int(c) for c in rare_classes)):
        idx = np.flatnonzero(cloud.labels == cls)
        if idx.size == 0:
            continue
        for comp in _single_linkage(cloud.positions[idx].astype(np.float64), link_distance):
            if comp.size < min_points:
                continue
            members = idx[comp]
            out.append(Instance(cls, cloud.positions[members], cloud.features[members]))
    return out


@dataclass(frozen=True)
class Placement:
    """One pasted instance: where it went and which output rows it owns."""

    class_id: int
    center: tuple[float, float, float]
    radius: float
    first_index: int
    num_points: int


@dataclass(frozen=True)
class CutmixSummary:
    requested: int
    placed: int
    skipped: int
    placements: tuple[Placement, ...]


def _rotate_z(points: np.ndarray, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    out = points.copy()
    out[:, 0] = c * points[:, 0] - s * points[:, 1]
    out[:, 1] = s * points[:, 0] + c * points[:, 1]
    return out


def instance_cutmix(
    cloud: PointCloud,
    bank: InstanceBank,
    count: int,
    rng: RngStream,
    *,
    margin: float = 0.2,
    max_attempts: int = 20,
    scale_range: tuple[float, float] = (0.95, 1.05),
) -> tuple[PointCloud, CutmixSummary]:
    """Paste ``count`` bank instances into the scene above ground points.

    Classes are cycled round-robin (ascending id) with a uniform pick inside
    each class. Each instance gets a uniform z-rotation in [0, 2pi) and a
    uniform scale from ``scale_range``, then lands with its xy centroid on a
    sampled ground point and its minimum z at that point's z. A placement is
    rejected and resampled (up to ``max_attempts``, then skipped) whenever
    any existing non-ground point, pasted ones included, lies inside the
    instance's xy bounding circle plus ``margin``.

    Draw order per instance, fixed for reproducibility: instance pick,
    rotation angle, scale, then one ground pick per attempt.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return cloud, CutmixSummary(0, 0, 0, ())
    if cloud.labels is None:
        raise ValueError("instance cutmix needs per-point labels")
    classes = bank.classes
    if not classes:
        raise ValueError("cannot paste from an empty bank")

    ground_mask = np.isin(cloud.labels, sorted(bank.ground_classes))
    ground_idx = np.flatnonzero(ground_mask)
    obstacle_chunks = [cloud.positions[~ground_mask][:, :2].astype(np.float64)]

    new_points: list[np.ndarray] = []
    new_features: list[np.ndarray] = []
    new_labels: list[np.ndarray] = []
    placements: list[Placement] = []
    skipped = 0
    appended = 0

    for j in range(count):
        cls = classes[j % len(classes)]
        pool = bank.by_class[cls]
        inst = pool[int(rng.gen.integers(len(pool)))]
        if inst.features.shape[1] != cloud.num_channels:
            raise ValueError(
                f"instance features have {inst.features.shape[1]} channels, "
                f"scene has {cloud.num_channels}"
            )
        angle = float(rng.gen.uniform(0.0, 2.0 * np.pi))
        scale = float(rng.gen.uniform(scale_range[0], scale_range[1]))
        shaped = _rotate_z(inst.points * scale, angle)
        radius = inst.radius * scale
        placed = False
        for _ in range(max_attempts):
            if ground_idx.size == 0:
                break
            g = cloud.positions[ground_idx[int(rng.gen.integers(ground_idx.size))]]
            center = np.array([g[0], g[1]], dtype=np.float64)
            reach = radius + margin
            blocked = any(
                chunk.size and (((chunk - center) ** 2).sum(axis=1) <= reach * reach).any()
                for chunk in obstacle_chunks
            )
            if blocked:
                continue
            moved = shaped + (float(g[0]), float(g[1]), float(g[2]))
            new_points.append(moved)
            new_features.append(np.asarray(inst.features))
            new_labels.append(np.full(inst.num_points, cls, dtype=np.int32))
            obstacle_chunks.append(moved[:, :2])
            placements.append(
                Placement(
                    class_id=cls,
                    center=(float(g[0]), float(g[1]), float(g[2])),
                    radius=radius,
                    first_index=cloud.num_points + appended,
                    num_points=inst.num_points,
                )
            )
            appended += inst.num_points
            placed = True
            break
        if not placed:
            skipped += 1

    if not new_points:
        return cloud, CutmixSummary(count, 0, skipped, ())
    dtype = cloud.positions.dtype
    positions = np.vstack([cloud.positions] + [p.astype(dtype) for p in new_points])
    features = np.vstack(
        [cloud.features] + [f.astype(cloud.features.dtype) for f in new_features]
    )
    labels = np.concatenate([cloud.labels] + new_labels)
    augmented = PointCloud(positions, features, labels)
    return augmented, CutmixSummary(count, len(placements), skipped, tuple(placements))


def global_scale_rotate(
    cloud: PointCloud, rng: RngStream, *, scale: float | None = None, angle: float | None = None
) -> PointCloud:
    """Scale all positions by s ~ U[0.95, 1.05], then rotate about z.

    Pass ``scale`` or ``angle`` to pin either draw (each None consumes one
    draw from the stream, scale first). Features and labels are untouched.
    """
    s = float(rng.gen.uniform(0.95, 1.05)) if scale is None else float(scale)
    theta = float(rng.gen.uniform(0.0, 2.0 * np.pi)) if angle is None else float(angle)
    pos = _rotate_z(cloud.positions.astype(np.float64) * s, theta)
    return PointCloud(pos.astype(cloud.positions.dtype), cloud.features, cloud.labels)
