"""Multi-view point cloud kernels.

A scan can live in three views: the raw point set, a sparse voxel grid, and
a spherical range image. This package provides the machinery to move
per-point features between those views and back: hash-keyed view indexing,
averaging scatters and interpolating gathers with exact analytic backward
passes, adaptive gated fusion of point-aligned view features, rare-instance
CutMix augmentation, and confusion-matrix/mIoU evaluation.
"""

from .augment import (
    CutmixSummary,
    Instance,
    InstanceBank,
    Placement,
    RngStream,
    extract_instances,
    global_scale_rotate,
    instance_cutmix,
    make_bank,
)
from .errors import KeyRangeError, MalformedFileError, UndefinedMetricError
from .fusion import (
    FusionCache,
    GateParams,
    ensemble_scores,
    fuse_add,
    fuse_concat,
    gated_fusion_backward,
    gated_fusion_forward,
)
from .index import (
    BucketTable,
    CollisionStats,
    RangeIndex,
    VoxelIndex,
    collision_stats,
    pack_pixel_cells,
    pack_voxel_cells,
    spherical_project,
    unpack_pixel_keys,
    unpack_voxel_keys,
    voxelize,
)
from .metrics import (
    ConfusionMatrix,
    MiouResult,
    format_class_iou_lines,
    format_report,
    miou,
)
from .pcio import (
    LabelMap,
    PointCloud,
    load_cloud,
    load_kitti_bin,
    load_kitti_labels,
    load_raw_labels,
    load_tensor,
    save_cloud,
    save_kitti_bin,
    save_raw_labels,
    save_tensor,
)
from .propagate import (
    GatherPlan,
    ScatterPlan,
    bilinear_plan,
    gather,
    gather_backward,
    nearest_plan,
    scatter_average,
    scatter_average_backward,
    scatter_plan,
    trilinear_plan,
)
from .synth import synthetic_scan

__version__ = "0.1.0"

__all__ = [
    "BucketTable",
    "CollisionStats",
    "ConfusionMatrix",
    "CutmixSummary",
    "FusionCache",
    "GateParams",
    "GatherPlan",
    "Instance",
    "InstanceBank",
    "KeyRangeError",
    "LabelMap",
    "MalformedFileError",
    "MiouResult",
    "Placement",
    "PointCloud",
    "RangeIndex",
    "RngStream",
    "ScatterPlan",
    "UndefinedMetricError",
    "VoxelIndex",
    "bilinear_plan",
    "collision_stats",
    "ensemble_scores",
    "extract_instances",
    "format_class_iou_lines",
    "format_report",
    "fuse_add",
    "fuse_concat",
    "gather",
    "gather_backward",
    "gated_fusion_backward",
    "gated_fusion_forward",
    "global_scale_rotate",
    "instance_cutmix",
    "load_cloud",
    "load_kitti_bin",
    "load_kitti_labels",
    "load_raw_labels",
    "load_tensor",
    "make_bank",
    "miou",
    "nearest_plan",
    "pack_pixel_cells",
    "pack_voxel_cells",
    "save_cloud",
    "save_kitti_bin",
    "save_raw_labels",
    "save_tensor",
    "scatter_average",
    "scatter_average_backward",
    "scatter_plan",
    "spherical_project",
    "synthetic_scan",
    "trilinear_plan",
    "unpack_pixel_keys",
    "unpack_voxel_keys",
    "voxelize",
]
