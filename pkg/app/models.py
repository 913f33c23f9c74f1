from typing import List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from .constants.constants import DEFAULT_HORIZONS, MAZE_LAYOUTS


# Simulation models
class EpisodeResult(BaseModel):
    total_reward: float = Field(ge=0.0)
    steps: int = Field(ge=0)
    reached: bool
    normalized_score: Optional[float] = None


class ReferenceScores(BaseModel):
    """Cached expert/random references for one maze"""

    maze_id: str
    episode_cap: int
    seed: int
    episodes: int
    layout_hash: str
    random_ref: float
    expert_ref: float


class MazeInfo(BaseModel):
    id: str
    rows: int
    cols: int
    free_cells: int
    episode_cap: int
    default_horizon: int
    ascii: str


# Dataset models
class GenConfig(BaseModel):
    maze_id: str = "umaze"
    total_steps: int
    horizon: Optional[int] = None
    seed: int = 0

    @field_validator("maze_id")
    @classmethod
    def _known_maze(cls, v: str) -> str:
        if v not in MAZE_LAYOUTS:
            raise ValueError(f"unknown maze id {v!r}")
        return v

    @model_validator(mode="after")
    def _check_sizes(self) -> "GenConfig":
        if self.horizon is None:
            self.horizon = DEFAULT_HORIZONS[self.maze_id]
        if self.horizon < 4 or self.horizon % 4:
            raise ValueError(f"horizon must be a positive multiple of 4, got {self.horizon}")
        if self.total_steps < 10 * self.horizon:
            raise ValueError(f"total_steps must be >= 10 * horizon ({10 * self.horizon}), got {self.total_steps}")
        return self


# Planning models
class PlanRequest(BaseModel):
    maze_id: str = "umaze"
    start_state: List[float] = Field(min_length=4, max_length=4)
    goal_position: List[float] = Field(min_length=2, max_length=2)
    engine: Literal["ddpm", "i2sb"] = "i2sb"
    prior: str = "straight_line"
    nfe: int = Field(default=16, ge=1)
    seed: int = 0


class PlanDump(BaseModel):
    maze_id: str
    engine: str
    prior: str
    n_steps: int
    nfe: int
    seed: int
    horizon: int
    plan_seconds: float
    rows: List[List[float]]


class PlanExecution(BaseModel):
    plan: PlanDump
    result: EpisodeResult


# Benchmark models
class TrainReport(BaseModel):
    checkpoint: str
    engine: str
    n_steps: int
    training_steps: int
    seed: int
    initial_loss: Optional[float] = None
    final_loss: Optional[float] = None
    skipped_steps: int = 0


class SweepRow(BaseModel):
    engine: str
    prior: str
    n_steps: int
    nfe: int
    training_steps: int
    mean_score: float
    stderr: float
    episodes: int
    seeds: int
    plan_seconds: float = 0.0


class SweepReport(BaseModel):
    maze_id: str
    horizon: int
    random_ref: float
    expert_ref: float
    rows: List[SweepRow] = []

    def filter(self, **criteria) -> List[SweepRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in criteria.items())]


class PriorCostReport(BaseModel):
    kind: str
    samples: int
    seconds_per_sample: float
    denoiser_forward_seconds: float
    ratio: float
    within_budget: bool
