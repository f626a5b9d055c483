"""Run configuration: ``key = value`` files with flag overrides."""
from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

ENV_DATA_ROOT = "TRIVIEW_DATA_ROOT"


@dataclass
class RunConfig:
    """Defaults for every command; any file key or flag may override.

    File keys match the field names. ``voxel_resolutions`` is a
    comma-separated float list; ``fov_up_deg``/``fov_down_deg`` are degrees.
    """

    data_root: Path | None = None
    label_map: Path | None = None
    range_h: int = 64
    range_w: int = 2048
    fov_up_deg: float = 3.0
    fov_down_deg: float = -25.0
    voxel_resolutions: tuple[float, ...] = (0.05, 0.1, 0.3)
    seed: int = 0
    out_dir: Path = Path("triview-out")
    threads: int = 1


_PARSERS = {
    "data_root": Path,
    "label_map": Path,
    "range_h": int,
    "range_w": int,
    "fov_up_deg": float,
    "fov_down_deg": float,
    "voxel_resolutions": lambda v: tuple(float(p) for p in v.split(",") if p.strip()),
    "seed": int,
    "out_dir": Path,
    "threads": int,
}


def load_config(path) -> RunConfig:
    """Parse a UTF-8 config file; unknown keys are rejected."""
    cfg = RunConfig()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = text.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _PARSERS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        try:
            setattr(cfg, key, _PARSERS[key](value))
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: bad value for {key!r}: {value!r}") from exc
    return cfg


def apply_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Return a copy with every non-None override applied. Flags win."""
    known = {f.name for f in fields(RunConfig)}
    updates = {}
    for key, value in overrides.items():
        if key not in known:
            raise ValueError(f"unknown config field {key!r}")
        if value is not None:
            updates[key] = value
    return replace(cfg, **updates)


def default_data_root() -> Path | None:
    value = os.environ.get(ENV_DATA_ROOT)
    return Path(value) if value else None


def resolve_input(path, cfg: RunConfig) -> Path:
    """Resolve an input path against cwd, then the configured data root."""
    candidate = Path(path)
    if candidate.exists():
        return candidate
    for root in (cfg.data_root, default_data_root()):
        if root is not None and (root / candidate).exists():
            return root / candidate
    return candidate
