"""Run configuration shared by all pipeline stages."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

from ..classifier import DEFAULT_C_GRID, DEFAULT_GAMMA_GRID


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class RunConfig:
    manifest: str | None = None
    out: str = "run"
    seed: int = 0
    # imaging
    resolution: int = 256
    grayscale: str = "luma"
    enhance: bool = True
    clahe_clip_limit: float = 2.0
    clahe_tiles: tuple[int, int] = (8, 8)
    augment_target: int = 200
    # segmentation
    base_channels: int = 64
    epochs: int = 100
    batch_size: int = 2
    lr: float = 1e-3
    val_fraction: float = 0.10
    segment_split: str = "test"
    # classification
    svm_c_grid: tuple[float, ...] = DEFAULT_C_GRID
    svm_gamma_grid: tuple[float, ...] = DEFAULT_GAMMA_GRID
    svm_tolerance: float = 1e-3
    svm_max_passes: int = 200
    cv_folds: int = 5
    train_source: str = "ground_truth"
    eval_source: str = "predicted"

    def validate(self) -> "RunConfig":
        positive = ("resolution", "base_channels", "epochs", "batch_size", "augment_target",
                    "lr", "clahe_clip_limit", "svm_tolerance", "svm_max_passes", "cv_folds")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.resolution % 16:
            raise ConfigError(f"resolution {self.resolution} is not divisible by 16")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.grayscale not in ("luma", "green"):
            raise ConfigError(f"unknown grayscale method {self.grayscale!r}")
        for name in ("train_source", "eval_source"):
            if getattr(self, name) not in ("ground_truth", "predicted"):
                raise ConfigError(f"{name} must be 'ground_truth' or 'predicted'")
        if not self.svm_c_grid or not self.svm_gamma_grid:
            raise ConfigError("SVM grids must be non-empty")
        if self.segment_split not in ("train", "test"):
            raise ConfigError("segment_split must be 'train' or 'test'")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["clahe_tiles"] = list(self.clahe_tiles)
        d["svm_c_grid"] = list(self.svm_c_grid)
        d["svm_gamma_grid"] = list(self.svm_gamma_grid)
        return d

    def hash(self) -> str:
        """Digest of every setting that affects results (the output directory excluded)."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def stage_seed(self, stage: str) -> int:
        digest = hashlib.sha256(f"{self.seed}:{stage}".encode()).digest()
        return int.from_bytes(digest[:8], "little")


def load_config(path=None, **overrides) -> RunConfig:
    """Read a JSON config file (optional) and apply non-None overrides."""
    values = {}
    if path is not None:
        try:
            values = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: expected a JSON object")
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for key in ("clahe_tiles", "svm_c_grid", "svm_gamma_grid"):
        if key in values:
            values[key] = tuple(values[key])
    return RunConfig(**values).validate()
