"""Run configuration, flat ``key=value`` files and a stable config hash."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

SMALL_DATASET = 100  # training sets below this size use batch 16


@dataclass
class RunConfig:
    dataset: str = ""
    missing_ratio: float = 0.2
    seed: int = 0
    mask_seed: int | None = None  # defaults to seed
    hidden_size: int = 128
    num_layers: int = 2
    scales: int = 6
    branch_channels: int = 32
    dilation: int = 2
    alpha: float = 1.0
    beta: float = 1.0
    lr: float = 3e-4
    batch_size: int = 0  # 0 = 64, or 16 for small training sets
    epochs: int = 100
    output_dir: str = "runs"
    zero_fill: bool = False  # replace the imputer by zero filling
    no_msfl: bool = False  # linear head on the last hidden state instead of the feature learner
    dtype: str = "float32"

    def validate(self) -> None:
        if not 0.0 <= self.missing_ratio < 1.0:
            raise ValueError(f"missing_ratio must be in [0, 1), got {self.missing_ratio}")
        for name in ("hidden_size", "num_layers", "scales", "branch_channels", "dilation"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 0:
            raise ValueError("batch_size must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            raise ValueError("alpha, beta must be >= 0 and not both zero")
        if self.zero_fill and self.no_msfl:
            raise ValueError("zero_fill and no_msfl together leave no model")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def effective_mask_seed(self) -> int:
        return self.seed if self.mask_seed is None else self.mask_seed

    def effective_batch_size(self, n_train: int) -> int:
        if self.batch_size:
            return self.batch_size
        return 16 if n_train < SMALL_DATASET else 64

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        """SHA-256 over every field except the output location."""
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _coerce(field_type, raw: str):
    t = str(field_type)
    if "bool" in t:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if "int" in t:
        return None if raw.lower() == "none" else int(raw)
    if "float" in t:
        return float(raw)
    return raw


def parse_config_file(path) -> dict:
    """Read ``key=value`` lines (``#`` comments allowed) into typed values."""
    types = {f.name: f.type for f in fields(RunConfig)}
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(types[key], raw)
    return out


def write_config_file(cfg: RunConfig, path) -> None:
    lines = [f"{k}={v}" for k, v in cfg.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n")
