import os
import sys
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..constants.constants import (
    ADAM_BETAS,
    ADAM_EPS,
    CLIP_NORM,
    DEFAULT_HORIZONS,
    ENGINES,
    LEARNING_RATE,
    MAZE_LAYOUTS,
)


class Settings(BaseSettings):
    # Output root; SBPLAN_OUT wins over config files and CLI flags
    out: Path = Path("runs")

    device: str = "cpu"
    workers: int = 1
    log_level: str = "INFO"

    # Plan service
    service_checkpoint_dir: Optional[Path] = None
    cors_origins: List[str] = ["http://localhost:3000", "http://127.0.0.1:3000"]

    model_config = SettingsConfigDict(env_prefix="SBPLAN_", env_file=".env", extra="ignore")

    def get_cors_origins(self) -> List[str]:
        return self.cors_origins


settings = Settings()


class ExperimentConfig(BaseModel):
    """One benchmark sweep: which models to train and which grid points to evaluate."""

    maze_id: str = "umaze"
    horizon: Optional[int] = None
    engines: List[Literal["ddpm", "i2sb"]] = list(ENGINES)
    priors: List[str] = ["gaussian", "straight_line", "learned"]

    # I2SB diffusion steps; DDPM realises its NFE axis with one model per N
    n_steps: int = 16
    ddpm_n_steps: List[int] = [1, 4, 16]
    ddpm_schedule: Literal["linear", "cosine"] = "linear"
    nfe_list: List[int] = [1, 2, 4, 8, 16]

    training_steps: List[int] = [2000, 8000, 32000]
    batch_size: int = 32
    dataset_steps: Optional[int] = None
    max_dataset_steps: int = 200_000
    dataset_seed: int = 0

    episodes: int = 200
    seeds: List[int] = [0]
    reference_episodes: int = 200
    reference_seed: int = 1234

    learning_rate: float = LEARNING_RATE
    betas: Tuple[float, float] = ADAM_BETAS
    eps: float = ADAM_EPS
    clip_norm: float = CLIP_NORM

    out_dir: Optional[Path] = None

    @field_validator("maze_id")
    @classmethod
    def _known_maze(cls, v: str) -> str:
        if v not in MAZE_LAYOUTS:
            raise ValueError(f"unknown maze id {v!r}")
        return v

    @field_validator("priors")
    @classmethod
    def _known_priors(cls, v: List[str]) -> List[str]:
        for tag in v:
            if tag.split(":", 1)[0] not in ("gaussian", "straight_line", "learned"):
                raise ValueError(f"unknown prior {tag!r}")
        return v

    @field_validator("episodes", "reference_episodes", "batch_size", "n_steps")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @model_validator(mode="after")
    def _check_grid(self) -> "ExperimentConfig":
        if self.horizon is None:
            self.horizon = DEFAULT_HORIZONS[self.maze_id]
        if self.horizon < 4 or self.horizon % 4:
            raise ValueError(f"horizon must be a positive multiple of 4, got {self.horizon}")
        bad = [n for n in self.nfe_list if n < 1 or n > self.n_steps]
        if bad:
            raise ValueError(f"nfe entries {bad} outside [1, {self.n_steps}]")
        if any(n < 1 for n in self.ddpm_n_steps):
            raise ValueError("ddpm_n_steps entries must be >= 1")
        if any(s < 0 for s in self.training_steps):
            raise ValueError("training_steps entries must be >= 0")
        return self


def load_experiment_config(path: Optional[Path] = None, overrides: Optional[Dict] = None) -> ExperimentConfig:
    """
    Read a TOML experiment file and apply CLI overrides on top
    Args:
        path: TOML file with flat keys matching ExperimentConfig fields
        overrides: values from the command line; None entries are ignored
    Returns:
        Validated ExperimentConfig
    """
    data: Dict = {}
    if path is not None:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return ExperimentConfig(**data)


def resolve_out_dir(config: ExperimentConfig, current: Optional[Settings] = None) -> Path:
    """Output root: SBPLAN_OUT, then the config's out_dir, then the settings default."""
    current = current or Settings()
    if "out" in current.model_fields_set or os.environ.get("SBPLAN_OUT"):
        return Path(current.out)
    if config.out_dir is not None:
        return Path(config.out_dir)
    return Path(current.out)
