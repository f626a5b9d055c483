"""Point-cloud containers and bit-exact file I/O.

Formats (all little-endian):

* scan ``.bin``: N records of four float32 ``(x, y, z, intensity)``.
* label ``.label``: N uint32; the low 16 bits are the semantic id, the high
  16 bits an instance id that is discarded on load.
* tensor: raw float32 payload in ``<path>`` plus a UTF-8 sidecar
  ``<path>.meta`` holding ``"M C\\n"``.
* label map: UTF-8 lines of ``"raw train"`` integer pairs, ``#`` comments.

All containers are immutable after construction and safe to share across
threads; loaders are pure functions of the file contents.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import MalformedFileError

_SCAN_RECORD_BYTES = 16
_LABEL_RECORD_BYTES = 4
_MAX_LABEL = 1 << 16


def _float_array(values) -> np.ndarray:
    arr = np.array(values, copy=True, order="C")
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return arr


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PointCloud:
    """N points with positions in meters plus per-point feature channels.

    ``positions`` is (N, 3) in the sensor frame (x forward, y left, z up).
    ``features`` is (N, C); channel semantics are caller-defined (channel 0
    is intensity for loaded scans). ``labels``, when present, is (N,) int32
    class ids in ``[0, 65536)``.
    """

    positions: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pos = _float_array(self.positions)
        if pos.size == 0:
            pos = pos.reshape(-1, 3)
        feat = _float_array(self.features)
        if feat.size == 0 and feat.ndim == 1:
            feat = feat.reshape(0, 0)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {pos.shape}")
        finite = np.isfinite(pos).all(axis=1)
        if not finite.all():
            raise ValueError(f"non-finite position at point {int(np.flatnonzero(~finite)[0])}")
        if feat.ndim != 2 or feat.shape[0] != pos.shape[0]:
            raise ValueError(f"features must be (N, C) with N={pos.shape[0]}, got {feat.shape}")
        object.__setattr__(self, "positions", _freeze(pos))
        object.__setattr__(self, "features", _freeze(feat))
        if self.labels is not None:
            lab = np.array(self.labels, dtype=np.int32, copy=True)
            if lab.shape != (pos.shape[0],):
                raise ValueError(f"labels must be ({pos.shape[0]},), got {lab.shape}")
            if lab.size and (lab.min() < 0 or lab.max() >= _MAX_LABEL):
                raise ValueError("labels must lie in [0, 65536)")
            object.__setattr__(self, "labels", _freeze(lab))

    @property
    def num_points(self) -> int:
        return self.positions.shape[0]

    @property
    def num_channels(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class LabelMap:
    """Raw dataset ids to contiguous train ids; unknown raw ids map to ignore.

    Train ids are contiguous in ``[0, num_classes)``; ``ignore_id`` is a
    sentinel outside that range whose points are excluded from metrics.
    """

    raw_to_train: dict[int, int]
    num_classes: int
    ignore_id: int = 255

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("a label map needs at least one train class")
        if 0 <= self.ignore_id < self.num_classes:
            raise ValueError("ignore_id must lie outside [0, num_classes)")
        seen = set()
        for raw, train in self.raw_to_train.items():
            if not (0 <= raw < _MAX_LABEL):
                raise ValueError(f"raw id {raw} outside [0, 65536)")
            if train != self.ignore_id:
                if not (0 <= train < self.num_classes):
                    raise ValueError(f"train id {train} outside [0, {self.num_classes})")
                seen.add(train)
        if seen != set(range(self.num_classes)):
            missing = sorted(set(range(self.num_classes)) - seen)
            raise ValueError(f"train ids are not contiguous, missing {missing}")

    @classmethod
    def from_pairs(cls, pairs: dict[int, int], ignore_id: int = 255) -> "LabelMap":
        trains = [t for t in pairs.values() if t != ignore_id]
        if not trains:
            raise ValueError("label map contains no non-ignored train ids")
        return cls(dict(pairs), num_classes=max(trains) + 1, ignore_id=ignore_id)

    @classmethod
    def from_file(cls, path, ignore_id: int = 255) -> "LabelMap":
        pairs: dict[int, int] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 2:
                raise MalformedFileError(f"{path}:{lineno}: expected 'raw train', got {line!r}")
            try:
                raw, train = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise MalformedFileError(f"{path}:{lineno}: non-integer pair {line!r}") from exc
            pairs[raw] = train
        return cls.from_pairs(pairs, ignore_id=ignore_id)

    @cached_property
    def _table(self) -> np.ndarray:
        table = np.full(_MAX_LABEL, self.ignore_id, dtype=np.int32)
        for raw, train in self.raw_to_train.items():
            table[raw] = train
        table.setflags(write=False)
        return table

    def map_semantic(self, semantic_ids) -> np.ndarray:
        """Map raw semantic ids (already instance-stripped) to train ids."""
        ids = np.asarray(semantic_ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= _MAX_LABEL):
            raise ValueError("semantic ids must lie in [0, 65536)")
        return self._table[ids]


def load_kitti_bin(path) -> PointCloud:
    """Decode a ``.bin`` scan into a PointCloud with C=1 (intensity)."""
    data = Path(path).read_bytes()
    if len(data) % _SCAN_RECORD_BYTES:
        raise MalformedFileError(
            f"{path}: size {len(data)} is not a multiple of {_SCAN_RECORD_BYTES}"
        )
    raw = np.frombuffer(data, dtype="<f4").reshape(-1, 4)
    finite = np.isfinite(raw[:, :3]).all(axis=1)
    if not finite.all():
        idx = int(np.flatnonzero(~finite)[0])
        raise MalformedFileError(f"{path}: non-finite position at point {idx}")
    return PointCloud(raw[:, :3], raw[:, 3:4])


def save_kitti_bin(cloud: PointCloud, path) -> None:
    """Write positions plus feature channel 0 as float32 records."""
    if cloud.num_channels < 1:
        raise ValueError("scan output needs at least one feature channel")
    rec = np.empty((cloud.num_points, 4), dtype="<f4")
    rec[:, :3] = cloud.positions
    rec[:, 3] = cloud.features[:, 0]
    Path(path).write_bytes(rec.tobytes())


def load_raw_labels(path) -> np.ndarray:
    """Read a ``.label`` file as raw uint32 records (instance bits kept)."""
    data = Path(path).read_bytes()
    if len(data) % _LABEL_RECORD_BYTES:
        raise MalformedFileError(
            f"{path}: size {len(data)} is not a multiple of {_LABEL_RECORD_BYTES}"
        )
    return np.frombuffer(data, dtype="<u4").copy()


def save_raw_labels(raw_labels, path) -> None:
    arr = np.ascontiguousarray(np.asarray(raw_labels, dtype="<u4"))
    Path(path).write_bytes(arr.tobytes())


def load_kitti_labels(path, label_map: LabelMap) -> np.ndarray:
    """Decode a ``.label`` file to train ids: low 16 bits through the map."""
    raw = load_raw_labels(path)
    return label_map.map_semantic(raw & np.uint32(0xFFFF))


def save_tensor(data, path) -> None:
    """Write an (M, C) tensor as raw float32 plus the ``M C`` sidecar."""
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise ValueError(f"tensor must be 2-D, got shape {arr.shape}")
    if arr.size and not np.isfinite(arr).all():
        raise ValueError("tensor entries must be finite")
    payload = np.ascontiguousarray(arr.astype("<f4", copy=False))
    Path(path).write_bytes(payload.tobytes())
    Path(f"{path}.meta").write_text(f"{arr.shape[0]} {arr.shape[1]}\n", encoding="utf-8")


def load_tensor(path) -> np.ndarray:
    """Read a tensor written by :func:`save_tensor`; bit-exact round trip."""
    meta_path = Path(f"{path}.meta")
    if not meta_path.exists():
        raise MalformedFileError(f"{path}: missing sidecar {meta_path.name}")
    parts = meta_path.read_text(encoding="utf-8").split()
    if len(parts) != 2:
        raise MalformedFileError(f"{meta_path}: expected 'M C'")
    try:
        rows, cols = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise MalformedFileError(f"{meta_path}: non-integer dimensions") from exc
    data = Path(path).read_bytes()
    if len(data) != rows * cols * 4:
        raise MalformedFileError(
            f"{path}: payload is {len(data)} bytes, sidecar implies {rows * cols * 4}"
        )
    out = np.frombuffer(data, dtype="<f4").reshape(rows, cols).copy()
    if out.size and not np.isfinite(out).all():
        raise MalformedFileError(f"{path}: non-finite tensor entry")
    return out


def save_cloud(cloud: PointCloud, path) -> None:
    """Persist a cloud as one (N, 3+C) tensor, labels in ``<path>.labels``.

    Storage is float32, so the round trip is field-exact for float32 clouds.
    """
    save_tensor(np.hstack([cloud.positions, cloud.features]), path)
    if cloud.labels is not None:
        Path(f"{path}.labels").write_bytes(
            np.ascontiguousarray(cloud.labels.astype("<i4")).tobytes()
        )


def load_cloud(path) -> PointCloud:
    combined = load_tensor(path)
    if combined.shape[1] < 3:
        raise MalformedFileError(f"{path}: cloud tensor needs at least 3 columns")
    labels = None
    label_path = Path(f"{path}.labels")
    if label_path.exists():
        labels = np.frombuffer(label_path.read_bytes(), dtype="<i4").copy()
    return PointCloud(combined[:, :3], combined[:, 3:], labels)
