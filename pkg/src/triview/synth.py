"""Deterministic synthetic LiDAR-like scans for demos, benchmarks, and tests."""
from __future__ import annotations

import numpy as np

from .pcio import PointCloud

GROUND_LABEL = 40
STRUCTURE_LABEL = 50
HIGH_LABEL = 70
RARE_LABEL = 11


def synthetic_scan(
    num_points: int = 120_000,
    seed: int = 0,
    *,
    num_beams: int = 64,
    fov_up: float = np.radians(3.0),
    fov_down: float = np.radians(-25.0),
    labeled: bool = False,
    rare_clusters: int = 0,
) -> PointCloud:
    """A rotating-scanner style scan: discrete beams, ground plane, clutter.

    Points are emitted along ``num_beams`` elevation rows at random azimuths;
    downward beams hit a ground plane at z = -1.7, the rest hit clutter at
    random ranges. ``rare_clusters`` compact blobs (label 11) replace the
    tail of the cloud when ``labeled`` is set. Same seed, same scan.
    """
    if num_points < 0:
        raise ValueError("num_points must be non-negative")
    rng = np.random.Generator(np.random.PCG64(seed))
    cluster_points = 80 if labeled else 0
    n_clusters = min(rare_clusters, num_points // max(cluster_points, 1)) if labeled else 0
    n_scan = num_points - n_clusters * cluster_points

    yaw = rng.uniform(-np.pi, np.pi, n_scan)
    beam = rng.integers(0, num_beams, n_scan)
    pitch = fov_down + (beam + 0.5) / num_beams * (fov_up - fov_down)
    sensor_height = 1.7
    ground_beam = np.sin(pitch) < -sensor_height / 75.0
    ground_range = np.divide(
        -sensor_height, np.sin(pitch), out=np.full(n_scan, 75.0), where=ground_beam
    )
    clutter_range = rng.uniform(3.0, 60.0, n_scan)
    rho = np.where(ground_beam, np.minimum(ground_range, 75.0), clutter_range)
    x = rho * np.cos(pitch) * np.cos(yaw)
    y = rho * np.cos(pitch) * np.sin(yaw)
    z = rho * np.sin(pitch)
    positions = np.stack([x, y, z], axis=1).astype(np.float32)
    intensity = rng.uniform(0.0, 1.0, n_scan).astype(np.float32)

    parts_pos = [positions]
    parts_int = [intensity]
    labels = None
    if labeled:
        scan_labels = np.where(
            ground_beam, GROUND_LABEL, np.where(z > 2.0, HIGH_LABEL, STRUCTURE_LABEL)
        ).astype(np.int32)
        parts_lab = [scan_labels]
        for _ in range(n_clusters):
            angle = rng.uniform(-np.pi, np.pi)
            dist = rng.uniform(5.0, 30.0)
            center = np.array([dist * np.cos(angle), dist * np.sin(angle), -1.2])
            blob = center + rng.normal(0.0, 0.3, (cluster_points, 3))
            parts_pos.append(blob.astype(np.float32))
            parts_int.append(np.full(cluster_points, 0.5, dtype=np.float32))
            parts_lab.append(np.full(cluster_points, RARE_LABEL, dtype=np.int32))
        labels = np.concatenate(parts_lab)
    positions = np.vstack(parts_pos)
    features = np.concatenate(parts_int)[:, None]
    return PointCloud(positions, features, labels)
