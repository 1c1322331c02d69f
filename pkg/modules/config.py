# modules/config.py
"""
Run configuration.

Precedence: command-line flags > ``--config`` file > model defaults. The
config file is flat ``key = value`` lines; ``#`` starts a comment and dashes
in keys are read as underscores.
"""

import logging
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from modules.errors import UsageError
from modules.manifolds import H_MAX
from modules.periodic import DEDUP_TOL, NEWTON_TOL
from modules.statistics import HIST_GRID, MAX_FREQ

logger = logging.getLogger(__name__)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k: float = Field(5.0, gt=0)
    n: int = Field(1, ge=1)
    n_max: int = Field(4, ge=1)
    rho: float = Field(1.0, gt=0)
    grid_res: Optional[int] = Field(None, ge=2)
    threads: int = Field(1, ge=1)
    seed: int = 0
    cache_dir: Optional[Path] = None
    out: Optional[Path] = None
    out_format: Literal["json", "csv"] = "json"
    newton_tol: float = Field(NEWTON_TOL, gt=0)
    dedup_tol: float = Field(DEDUP_TOL, gt=0)
    samples: int = Field(10 ** 5, ge=1)
    z_samples: int = Field(2000, ge=1)
    horizon: int = Field(10 ** 4, ge=1)
    h_max: float = Field(H_MAX, gt=0)
    eps: float = 0.0
    harmonic: int = Field(2, ge=1)
    k_list: Optional[List[float]] = None
    max_freq: int = Field(MAX_FREQ, ge=0)
    hist_grid: int = Field(HIST_GRID, ge=1)
    log_level: str = "INFO"
    progress: bool = False

    @field_validator("k_list", mode="before")
    @classmethod
    def split_k_list(cls, v):
        if isinstance(v, str):
            return [float(s) for s in v.split(",") if s.strip()]
        return v

    @field_validator("log_level")
    @classmethod
    def upper_level(cls, v: str) -> str:
        v = v.upper()
        if v not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {v}")
        return v


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise UsageError(f"cannot read config file {path}: {e}")

    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in RunConfig.model_fields:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def build_config(flags: dict, config_path=None) -> RunConfig:
    """Merge file values and explicitly given flags (``None`` means not given)."""
    values = read_config_file(config_path) if config_path else {}
    values.update({k: v for k, v in flags.items() if v is not None and k in RunConfig.model_fields})
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise UsageError(f"invalid configuration: {e}")
