import logging
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .constants.constants import (
    ACTION_DIM,
    DT,
    PRIOR_COST_BUDGET,
    PRIOR_TAGS,
    STATE_DIM,
    TRANSITION_DIM,
    V_MAX,
)
from .errors import CheckpointError
from .models import PriorCostReport
from .networks import DenoiserNetwork, PriorNetwork, prior_forward
from .seeding import TorchRNG, standard_normal, torch_generator
from .trajectory import Conditioning, NormalizationStats, Trajectory, denormalize_array, normalize_array

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PriorKind:
    tag: str
    checkpoint: Optional[str] = None

    @classmethod
    def parse(cls, text: str) -> "PriorKind":
        """'gaussian', 'straight_line', 'learned' or 'learned:<checkpoint path>'"""
        tag, _, checkpoint = text.partition(":")
        if tag not in PRIOR_TAGS:
            raise ValueError(f"unknown prior {text!r}; expected one of {PRIOR_TAGS}")
        if tag != "learned" and checkpoint:
            raise ValueError(f"prior {tag!r} takes no checkpoint")
        return cls(tag, checkpoint or None)

    def __str__(self) -> str:
        return self.tag


def gaussian_prior(horizon: int, rng: TorchRNG, transition_dim: int = TRANSITION_DIM, batch: int = 1) -> torch.Tensor:
    """i.i.d. standard normal entries, (batch, horizon, transition_dim)"""
    return standard_normal((batch, horizon, transition_dim), rng)


def straight_line_raw(start_state: np.ndarray, goal_pos: np.ndarray, horizon: int) -> np.ndarray:
    """
    Constant-velocity line from start to goal in raw units
    Args:
        start_state: [x, y, vx, vy]
        goal_pos: [x, y]
        horizon: rows in the result
    Returns:
        (horizon, 6) array of [action, state] rows
    """
    start = np.asarray(start_state, dtype=np.float64)[:2]
    goal = np.asarray(goal_pos, dtype=np.float64)[:2]
    frac = np.linspace(0.0, 1.0, horizon)[:, None]
    positions = start + frac * (goal - start)
    positions[0], positions[-1] = start, goal

    delta = goal - start
    velocity = delta / ((horizon - 1) * DT)
    speed = np.linalg.norm(velocity)
    if speed > V_MAX:
        velocity = velocity * (V_MAX / speed)
    distance = np.linalg.norm(delta)
    action = delta / distance if distance > 0 else np.zeros(2)

    out = np.empty((horizon, ACTION_DIM + STATE_DIM))
    out[:, :ACTION_DIM] = action
    out[:, ACTION_DIM:ACTION_DIM + 2] = positions
    out[:, ACTION_DIM + 2:] = velocity
    return out


def straight_line_prior(start_state: np.ndarray, goal_pos: np.ndarray, horizon: int,
                        stats: NormalizationStats) -> Trajectory:
    """Straight-line trajectory normalized with the dataset stats"""
    return Trajectory(normalize_array(straight_line_raw(start_state, goal_pos, horizon), stats), normalized=True)


def learned_prior(pnet: Optional[PriorNetwork], start_state: torch.Tensor, goal_state: torch.Tensor) -> Trajectory:
    if pnet is None:
        raise CheckpointError("learned prior requested without a prior network checkpoint")
    with torch.no_grad():
        out = prior_forward(pnet, start_state, goal_state)
    return Trajectory(out[0].numpy(), normalized=True)


def build_prior_batch(kind: PriorKind, conditioning: Conditioning, stats: NormalizationStats, horizon: int,
                      rng: TorchRNG, prior_net: Optional[PriorNetwork] = None) -> torch.Tensor:
    """
    Prior samples x1 for a batch, paired with the conditioning endpoints
    Args:
        kind: which prior
        conditioning: normalized start and goal states, one row per item
        stats: dataset stats used to move between raw and normalized units
        horizon: trajectory length
        rng: generator(s), only drawn from by the gaussian prior
        prior_net: required for the learned prior
    Returns:
        (batch, horizon, transition_dim) normalized tensor
    """
    batch = conditioning.start.shape[0]
    if kind.tag == "gaussian":
        return gaussian_prior(horizon, rng, stats.dim, batch)
    if kind.tag == "straight_line":
        state_stats = stats.select(ACTION_DIM, stats.dim)
        starts = denormalize_array(conditioning.start.numpy(), state_stats)
        goals = denormalize_array(conditioning.goal.numpy(), state_stats)
        lines = [straight_line_raw(s, g[:2], horizon) for s, g in zip(starts, goals)]
        return torch.from_numpy(normalize_array(np.stack(lines), stats))
    if prior_net is None:
        raise CheckpointError("learned prior requested without a prior network checkpoint")
    with torch.no_grad():
        return prior_forward(prior_net, conditioning.start, conditioning.goal)


def _mean_seconds(fn, n: int) -> float:
    start = time.perf_counter()
    for _ in range(n):
        fn()
    return (time.perf_counter() - start) / n


def prior_cost_report(kind: PriorKind, n: int, denoiser: DenoiserNetwork, stats: NormalizationStats,
                      prior_net: Optional[PriorNetwork] = None, seed: int = 0) -> PriorCostReport:
    """
    Mean wall-time of one prior sample against one denoiser forward pass
    Args:
        kind: prior to time
        n: samples to time, at least 100
        denoiser: network whose forward pass is the yardstick
        stats: dataset stats
        prior_net: required for the learned prior
    Returns:
        PriorCostReport; within_budget when the ratio is below PRIOR_COST_BUDGET
    """
    if n < 100:
        raise ValueError(f"prior cost needs n >= 100 samples, got {n}")
    horizon = denoiser.horizon
    rng = torch_generator(seed)
    zero_state = torch.zeros(1, stats.dim - ACTION_DIM, dtype=torch.float64)
    cond = Conditioning(zero_state, zero_state.clone())
    prior_seconds = _mean_seconds(lambda: build_prior_batch(kind, cond, stats, horizon, rng, prior_net), n)

    x = torch.zeros(1, horizon, denoiser.transition_dim, dtype=torch.float64)
    t = torch.zeros(1, dtype=torch.int64)
    with torch.no_grad():
        denoiser(x, t)
        forward_seconds = _mean_seconds(lambda: denoiser(x, t), 5)

    ratio = prior_seconds / forward_seconds
    report = PriorCostReport(
        kind=kind.tag,
        samples=n,
        seconds_per_sample=prior_seconds,
        denoiser_forward_seconds=forward_seconds,
        ratio=ratio,
        within_budget=ratio < PRIOR_COST_BUDGET,
    )
    if not report.within_budget:
        logger.warning(f"Prior {kind.tag} costs {ratio:.3%} of a denoiser forward pass")
    return report
