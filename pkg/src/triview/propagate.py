"""Feature movement between points and view elements, with analytic backwards.

Point features enter a view by per-bucket averaging; view features return to
points by nearest-bucket lookup or by bi/trilinear interpolation over the
surrounding elements. Every backward pass is the exact transpose of its
forward, so finite differences and adjointness checks agree to rounding.

Inputs may be float32 or float64; reductions accumulate in float64 and the
result is cast back to the input dtype, keeping sums independent of bucket
iteration order at the documented tolerances.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .index import RangeIndex, VoxelIndex, _positions_of, pack_voxel_cells, _CELL_MIN, _CELL_MAX


@dataclass(frozen=True)
class ScatterPlan:
    """Point-to-bucket routing for averaging scatters."""

    bucket_of_point: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.bucket_of_point.setflags(write=False)
        self.counts.setflags(write=False)
        if self.counts.size and self.counts.min() < 1:
            raise ValueError("every bucket must hold at least one point")

    @property
    def num_points(self) -> int:
        return self.bucket_of_point.shape[0]

    @property
    def num_buckets(self) -> int:
        return self.counts.shape[0]


def scatter_plan(index) -> ScatterPlan:
    table = index.table
    return ScatterPlan(
        bucket_of_point=table.bucket_of_point.copy(),
        counts=table.counts.astype(np.int64),
    )


def _check_features(features, rows: int, what: str) -> np.ndarray:
    arr = np.asarray(features)
    if arr.ndim != 2:
        raise ValueError(f"{what} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] != rows:
        raise ValueError(f"{what} has {arr.shape[0]} rows, plan expects {rows}")
    return arr


def scatter_average(features, plan: ScatterPlan) -> np.ndarray:
    """Per-bucket mean of the point features: out[j] = mean of bucket j."""
    feats = _check_features(features, plan.num_points, "point features")
    work = feats.astype(np.float64, copy=False)
    indexed = plan.bucket_of_point >= 0
    idx = plan.bucket_of_point[indexed]
    out = np.empty((plan.num_buckets, feats.shape[1]), dtype=np.float64)
    for c in range(feats.shape[1]):
        out[:, c] = np.bincount(idx, weights=work[indexed, c], minlength=plan.num_buckets)
    out /= plan.counts[:, None]
    return out.astype(feats.dtype, copy=False)


def scatter_average_backward(grad_output, plan: ScatterPlan) -> np.ndarray:
    """Gradient of :func:`scatter_average`: each point gets grad / bucket size."""
    grad = _check_features(grad_output, plan.num_buckets, "upstream gradient")
    work = grad.astype(np.float64, copy=False) / plan.counts[:, None]
    out = np.zeros((plan.num_points, grad.shape[1]), dtype=np.float64)
    indexed = plan.bucket_of_point >= 0
    out[indexed] = work[plan.bucket_of_point[indexed]]
    return out.astype(grad.dtype, copy=False)


@dataclass(frozen=True)
class GatherPlan:
    """Per-point interpolation stencil over view buckets.

    ``neighbor_ids`` holds bucket ids with -1 for missing neighbors;
    ``weights`` are the geometric weights (non-negative, summing to 1 per
    indexed point); ``effective_weights`` are the weights actually applied,
    renormalized over the present neighbors and all zero for points outside
    the view.
    """

    mode: str
    neighbor_ids: np.ndarray
    weights: np.ndarray
    effective_weights: np.ndarray
    num_buckets: int

    def __post_init__(self):
        for name in ("neighbor_ids", "weights", "effective_weights"):
            getattr(self, name).setflags(write=False)

    @property
    def num_points(self) -> int:
        return self.neighbor_ids.shape[0]


def _renormalize(ids: np.ndarray, weights: np.ndarray, fallback: np.ndarray,
                 valid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Drop missing neighbors, rescale the rest to sum 1; a fully missing
    # stencil of a valid point falls back to its own bucket with weight 1.
    eff = np.where(ids >= 0, weights, 0.0)
    total = eff.sum(axis=1)
    covered = total > 0.0
    eff[covered] /= total[covered, None]
    needs_fallback = valid & ~covered
    if needs_fallback.any():
        ids = ids.copy()
        rows = np.flatnonzero(needs_fallback)
        ids[rows, 0] = fallback[rows]
        eff[rows] = 0.0
        eff[rows, 0] = np.where(fallback[rows] >= 0, 1.0, 0.0)
    return ids, eff


def nearest_plan(index) -> GatherPlan:
    """Each point reads the feature of its own bucket."""
    table = index.table
    ids = table.bucket_of_point.reshape(-1, 1).copy()
    weights = np.ones_like(ids, dtype=np.float64)
    eff = np.where(ids >= 0, 1.0, 0.0)
    return GatherPlan("nearest", ids, weights, eff, table.num_buckets)


def bilinear_plan(rindex: RangeIndex) -> GatherPlan:
    """Four-neighbor stencil on the range image.

    Pixel (n, m) has its center at (n + 0.5, m + 0.5) in continuous
    coordinates, so interpolation runs at ``norm_coords - 0.5``; border
    neighbors clamp into the image (no yaw wrap), and unoccupied pixels are
    dropped with weight renormalization.
    """
    n = rindex.num_points
    y = rindex.norm_coords[:, 0] - 0.5
    x = rindex.norm_coords[:, 1] - 0.5
    r0 = np.floor(y)
    c0 = np.floor(x)
    fr = y - r0
    fc = x - c0
    rows = np.stack([r0, r0, r0 + 1.0, r0 + 1.0], axis=1).astype(np.int64)
    cols = np.stack([c0, c0 + 1.0, c0, c0 + 1.0], axis=1).astype(np.int64)
    weights = np.stack(
        [(1.0 - fr) * (1.0 - fc), (1.0 - fr) * fc, fr * (1.0 - fc), fr * fc], axis=1
    )
    rows = np.clip(rows, 0, rindex.height - 1)
    cols = np.clip(cols, 0, rindex.width - 1)
    keys = (rows * rindex.width + cols).astype(np.uint64)
    ids = rindex.table.lookup(keys.reshape(-1)).reshape(n, 4)
    invalid = ~rindex.valid
    if invalid.any():
        ids[invalid] = -1
        weights[invalid] = (1.0, 0.0, 0.0, 0.0)
    ids, eff = _renormalize(ids, weights, rindex.bucket_of_point, rindex.valid)
    return GatherPlan("bilinear", ids, weights, eff, rindex.num_pixels)


def trilinear_plan(vindex: VoxelIndex, cloud_or_positions) -> GatherPlan:
    """Eight-neighbor stencil on the voxel grid.

    The continuous grid coordinate is ``position / r - 0.5`` (voxel centers
    at integers); weights are the per-axis products of ``1 - |delta|``.
    Unoccupied neighbor cells are dropped with renormalization; should every
    neighbor be missing the point falls back to its own cell.
    """
    pos = _positions_of(cloud_or_positions)
    if pos.shape[0] != vindex.num_points:
        raise ValueError(
            f"positions have {pos.shape[0]} rows, index has {vindex.num_points}"
        )
    grid = pos.astype(np.float64) / vindex.resolution - 0.5
    base = np.floor(grid)
    frac = grid - base
    base = base.astype(np.int64)
    n = pos.shape[0]
    ids = np.empty((n, 8), dtype=np.int64)
    weights = np.empty((n, 8), dtype=np.float64)
    axis_w = np.stack([1.0 - frac, frac], axis=0)  # (2, N, 3)
    for k, (dx, dy, dz) in enumerate(product((0, 1), repeat=3)):
        cell = base + (dx, dy, dz)
        weights[:, k] = axis_w[dx, :, 0] * axis_w[dy, :, 1] * axis_w[dz, :, 2]
        in_range = ((cell >= _CELL_MIN) & (cell <= _CELL_MAX)).all(axis=1)
        keys = pack_voxel_cells(np.where(in_range[:, None], cell, 0))
        found = vindex.table.lookup(keys)
        ids[:, k] = np.where(in_range, found, -1)
    valid = np.ones(n, dtype=bool)
    ids, eff = _renormalize(ids, weights, vindex.bucket_of_point, valid)
    return GatherPlan("trilinear", ids, weights, eff, vindex.num_voxels)


def gather(features, plan: GatherPlan) -> np.ndarray:
    """Weighted read of bucket features back onto points.

    Points with no usable neighbor (outside the view) receive zeros.
    """
    feats = _check_features(features, plan.num_buckets, "bucket features")
    n, channels = plan.num_points, feats.shape[1]
    if plan.num_buckets == 0:
        return np.zeros((n, channels), dtype=feats.dtype)
    work = feats.astype(np.float64, copy=False)
    ids = np.maximum(plan.neighbor_ids, 0)
    out = (work[ids] * plan.effective_weights[:, :, None]).sum(axis=1)
    return out.astype(feats.dtype, copy=False)


def gather_backward(grad_output, plan: GatherPlan) -> np.ndarray:
    """Exact transpose of :func:`gather`: scatter-adds weighted gradients."""
    grad = _check_features(grad_output, plan.num_points, "upstream gradient")
    channels = grad.shape[1]
    work = grad.astype(np.float64, copy=False)
    stencil = plan.neighbor_ids.shape[1]
    flat_ids = plan.neighbor_ids.reshape(-1)
    flat_w = plan.effective_weights.reshape(-1)
    present = flat_ids >= 0
    ids = flat_ids[present]
    w = flat_w[present]
    points = np.repeat(np.arange(plan.num_points), stencil)[present]
    out = np.empty((plan.num_buckets, channels), dtype=np.float64)
    for c in range(channels):
        out[:, c] = np.bincount(ids, weights=w * work[points, c], minlength=plan.num_buckets)
    return out.astype(grad.dtype, copy=False)
