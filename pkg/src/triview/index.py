"""Hash-keyed correspondence between points and view elements.

Two views are indexed: integer voxel cells of edge length ``r`` and pixels of
a spherical range image. Each view packs its cell into a unique 64-bit key
and groups point indices into exact-key buckets ordered by first occurrence,
so downstream kernels and golden-file outputs are deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import KeyRangeError
from .pcio import PointCloud

_COORD_BITS = 21
_CELL_MIN = -(1 << 20)
_CELL_MAX = (1 << 20) - 1
_MASK21 = (1 << _COORD_BITS) - 1


def _positions_of(cloud_or_positions) -> np.ndarray:
    if isinstance(cloud_or_positions, PointCloud):
        return cloud_or_positions.positions
    arr = np.asarray(cloud_or_positions)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"positions must be (N, 3), got {arr.shape}")
    return arr


def pack_voxel_cells(cells) -> np.ndarray:
    """Pack integer cell triples into uint64 keys (three 21-bit fields).

    Injective over components in ``[-2**20, 2**20 - 1]``; anything outside
    raises :class:`KeyRangeError` naming the first offending row.
    """
    arr = np.asarray(cells, dtype=np.int64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != 3:
        raise ValueError(f"cells must be (N, 3), got {arr.shape}")
    bad = (arr < _CELL_MIN) | (arr > _CELL_MAX)
    if bad.any():
        row = int(np.flatnonzero(bad.any(axis=1))[0])
        raise KeyRangeError(
            f"cell {row} = {tuple(int(v) for v in arr[row])} has a component "
            f"outside [{_CELL_MIN}, {_CELL_MAX}]"
        )
    parts = (arr & _MASK21).astype(np.uint64)
    keys = (parts[:, 0] << np.uint64(42)) | (parts[:, 1] << np.uint64(21)) | parts[:, 2]
    return keys[0] if single else keys


def unpack_voxel_keys(keys) -> np.ndarray:
    """Inverse of :func:`pack_voxel_cells` (sign-extends the 21-bit fields)."""
    arr = np.atleast_1d(np.asarray(keys, dtype=np.uint64))
    out = np.empty((arr.shape[0], 3), dtype=np.int64)
    for axis, shift in enumerate((42, 21, 0)):
        field = ((arr >> np.uint64(shift)) & np.uint64(_MASK21)).astype(np.int64)
        out[:, axis] = np.where(field > _CELL_MAX, field - (1 << _COORD_BITS), field)
    return out[0] if np.isscalar(keys) or np.ndim(keys) == 0 else out


def pack_pixel_cells(pixels, width: int) -> np.ndarray:
    """Pack (row, col) pixel pairs into uint64 keys ``row * width + col``."""
    arr = np.asarray(pixels, dtype=np.int64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[1] != 2:
        raise ValueError(f"pixels must be (N, 2), got {arr.shape}")
    bad = (arr[:, 0] < 0) | (arr[:, 1] < 0) | (arr[:, 1] >= width)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise KeyRangeError(f"pixel {row} = {tuple(int(v) for v in arr[row])} outside grid")
    keys = (arr[:, 0] * width + arr[:, 1]).astype(np.uint64)
    return keys[0] if single else keys


def unpack_pixel_keys(keys, width: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(keys, dtype=np.uint64)).astype(np.int64)
    out = np.stack([arr // width, arr % width], axis=1)
    return out[0] if np.isscalar(keys) or np.ndim(keys) == 0 else out


@dataclass(frozen=True)
class BucketTable:
    """Exact-key buckets of point indices, ordered by first occurrence.

    ``keys[j]`` is the packed key of bucket ``j``; ``point_order`` holds the
    indexed points grouped by bucket (ascending inside each bucket) with
    bucket ``j`` occupying ``point_order[starts[j]:starts[j + 1]]``.
    """

    keys: np.ndarray
    bucket_of_point: np.ndarray
    point_order: np.ndarray
    starts: np.ndarray

    def __post_init__(self):
        for name in ("keys", "bucket_of_point", "point_order", "starts"):
            getattr(self, name).setflags(write=False)

    @property
    def num_buckets(self) -> int:
        return self.keys.shape[0]

    @property
    def num_indexed(self) -> int:
        return self.point_order.shape[0]

    @cached_property
    def counts(self) -> np.ndarray:
        counts = np.diff(self.starts)
        counts.setflags(write=False)
        return counts

    def points_in(self, bucket: int) -> np.ndarray:
        return self.point_order[self.starts[bucket] : self.starts[bucket + 1]]

    def buckets(self) -> dict[int, np.ndarray]:
        """Mapping packed key -> point indices, in first-occurrence order."""
        return {int(k): self.points_in(j) for j, k in enumerate(self.keys)}

    @cached_property
    def _search(self) -> tuple[np.ndarray, np.ndarray]:
        perm = np.argsort(self.keys)
        return self.keys[perm], perm

    def lookup(self, query_keys) -> np.ndarray:
        """Bucket ids for packed keys; -1 where the key has no bucket."""
        query = np.asarray(query_keys, dtype=np.uint64)
        if self.num_buckets == 0:
            return np.full(query.shape, -1, dtype=np.int64)
        sorted_keys, perm = self._search
        pos = np.searchsorted(sorted_keys, query)
        pos_c = np.minimum(pos, sorted_keys.shape[0] - 1)
        hit = sorted_keys[pos_c] == query
        return np.where(hit, perm[pos_c], -1)


def _build_table(point_keys: np.ndarray, valid: np.ndarray | None = None) -> BucketTable:
    n = point_keys.shape[0]
    if valid is None:
        indexed = np.arange(n, dtype=np.int64)
        keys_v = point_keys
    else:
        indexed = np.flatnonzero(valid)
        keys_v = point_keys[indexed]
    uniq, first, inverse = np.unique(keys_v, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty(uniq.shape[0], dtype=np.int64)
    rank[order] = np.arange(uniq.shape[0])
    bucket_ids = rank[inverse.reshape(-1)]
    bucket_of_point = np.full(n, -1, dtype=np.int64)
    bucket_of_point[indexed] = bucket_ids
    grouped = np.argsort(bucket_ids, kind="stable")
    counts = np.bincount(bucket_ids, minlength=uniq.shape[0])
    starts = np.zeros(uniq.shape[0] + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    return BucketTable(
        keys=uniq[order].copy(),
        bucket_of_point=bucket_of_point,
        point_order=indexed[grouped],
        starts=starts,
    )


@dataclass(frozen=True)
class VoxelIndex:
    """Points bucketed into integer grid cells of edge ``resolution`` meters."""

    resolution: float
    cell_of_point: np.ndarray
    table: BucketTable

    def __post_init__(self):
        self.cell_of_point.setflags(write=False)

    @property
    def num_points(self) -> int:
        return self.cell_of_point.shape[0]

    @property
    def num_voxels(self) -> int:
        return self.table.num_buckets

    @property
    def voxel_keys(self) -> np.ndarray:
        return self.table.keys

    @property
    def bucket_of_point(self) -> np.ndarray:
        return self.table.bucket_of_point

    def buckets(self) -> dict[int, np.ndarray]:
        return self.table.buckets()


def voxelize(cloud, resolution: float) -> VoxelIndex:
    """Bucket points into cells ``floor(position / resolution)`` per axis.

    Quantization runs in float64 regardless of the storage dtype, and the
    floor is a true floor (-0.6 maps to -1), keeping cells translation
    consistent for negative coordinates.
    """
    if resolution <= 0:
        raise ValueError(f"resolution must be positive, got {resolution}")
    pos = _positions_of(cloud)
    cells = np.floor(pos.astype(np.float64) / float(resolution)).astype(np.int64)
    keys = pack_voxel_cells(cells)
    return VoxelIndex(
        resolution=float(resolution), cell_of_point=cells, table=_build_table(keys)
    )


@dataclass(frozen=True)
class RangeIndex:
    """Points bucketed into pixels of an H x W spherical range image.

    ``norm_coords`` keeps the continuous (row, col) coordinates before
    integer truncation, clamped into ``[0, H) x [0, W)``; ``valid`` is False
    only for zero-range points, which belong to no bucket.
    """

    height: int
    width: int
    fov_up: float
    fov_down: float
    norm_coords: np.ndarray
    pixel_of_point: np.ndarray
    valid: np.ndarray
    table: BucketTable

    def __post_init__(self):
        for name in ("norm_coords", "pixel_of_point", "valid"):
            getattr(self, name).setflags(write=False)

    @property
    def num_points(self) -> int:
        return self.valid.shape[0]

    @property
    def num_pixels(self) -> int:
        return self.table.num_buckets

    @property
    def pixel_keys(self) -> np.ndarray:
        return self.table.keys

    @property
    def bucket_of_point(self) -> np.ndarray:
        return self.table.bucket_of_point

    def buckets(self) -> dict[int, np.ndarray]:
        return self.table.buckets()

    @classmethod
    def from_norm_coords(
        cls,
        norm_coords,
        height: int,
        width: int,
        valid=None,
        fov_up: float = 0.0,
        fov_down: float = 0.0,
    ) -> "RangeIndex":
        """Build an index from precomputed continuous (row, col) coordinates."""
        if height < 1 or width < 1:
            raise ValueError("image dimensions must be at least 1x1")
        norm = np.array(norm_coords, dtype=np.float64, copy=True)
        if norm.ndim != 2 or norm.shape[1] != 2:
            raise ValueError(f"norm_coords must be (N, 2), got {norm.shape}")
        if valid is None:
            valid_arr = np.ones(norm.shape[0], dtype=bool)
        else:
            valid_arr = np.asarray(valid, dtype=bool).copy()
        norm[~valid_arr] = 0.0
        if not np.isfinite(norm).all():
            raise ValueError("norm_coords of valid points must be finite")
        norm[:, 0] = np.clip(norm[:, 0], 0.0, np.nextafter(float(height), 0.0))
        norm[:, 1] = np.clip(norm[:, 1], 0.0, np.nextafter(float(width), 0.0))
        pixels = np.floor(norm).astype(np.int64)
        pixels[:, 0] = np.clip(pixels[:, 0], 0, height - 1)
        pixels[:, 1] = np.clip(pixels[:, 1], 0, width - 1)
        keys = pack_pixel_cells(pixels, width)
        return cls(
            height=int(height),
            width=int(width),
            fov_up=float(fov_up),
            fov_down=float(fov_down),
            norm_coords=norm,
            pixel_of_point=pixels,
            valid=valid_arr,
            table=_build_table(keys, valid=valid_arr),
        )


def spherical_project(
    cloud, height: int, width: int, fov_up: float, fov_down: float
) -> RangeIndex:
    """Project points onto a spherical range-image grid.

    Yaw maps to columns with the wrap at azimuth +/-pi landing in column 0;
    pitch maps to rows with row 0 at ``fov_up`` (angles in radians,
    ``fov_down`` negative below the horizon). Out-of-field pitches clamp into
    the image rather than being dropped, so every nonzero-range point lands
    in exactly one pixel; zero-range points are marked invalid.
    """
    if fov_up <= fov_down:
        raise ValueError("fov_up must exceed fov_down")
    pos = _positions_of(cloud).astype(np.float64)
    rho = np.sqrt((pos * pos).sum(axis=1))
    valid = rho > 0.0
    yaw = np.arctan2(pos[:, 1], pos[:, 0])
    sin_pitch = np.divide(pos[:, 2], rho, out=np.zeros_like(rho), where=valid)
    pitch = np.arcsin(np.clip(sin_pitch, -1.0, 1.0))
    col = 0.5 * (1.0 - yaw / np.pi) * width
    row = (1.0 - (pitch - fov_down) / (fov_up - fov_down)) * height
    norm = np.stack([row, col], axis=1)
    return RangeIndex.from_norm_coords(
        norm, height, width, valid=valid, fov_up=fov_up, fov_down=fov_down
    )


@dataclass(frozen=True)
class CollisionStats:
    """Bucket occupancy summary: how much the view quantizes points together."""

    occupied: int
    mean_points: float
    max_points: int
    multi_fraction: float


def collision_stats(index) -> CollisionStats:
    counts = index.table.counts
    if counts.shape[0] == 0:
        return CollisionStats(0, 0.0, 0, 0.0)
    return CollisionStats(
        occupied=int(counts.shape[0]),
        mean_points=float(counts.mean()),
        max_points=int(counts.max()),
        multi_fraction=float((counts > 1).mean()),
    )
