import logging
from typing import Tuple

import numpy as np
import torch

from .constants.constants import (
    ACTION_DIM,
    DATASET_STEPS_PER_SAMPLE,
    SEGMENT_REUSE_CAP,
)
from .errors import EmptyDatasetError
from .maze import expert_action, initial_state, make_maze, sample_free_point, step
from .models import GenConfig
from .seeding import numpy_rng
from .trajectory import Conditioning, Dataset, NormalizationStats

logger = logging.getLogger(__name__)


def dataset_steps_for(training_steps: int, batch_size: int, horizon: int, max_steps: int) -> int:
    """
    Logged environment steps backing a run of `training_steps` batches
    Args:
        training_steps: gradient batches drawn during training
        batch_size: segments per batch
        horizon: segment length; the log is never shorter than 10 horizons
        max_steps: upper clamp so large sweeps stay cheap to generate
    Returns:
        total_steps for GenConfig
    """
    total = DATASET_STEPS_PER_SAMPLE * training_steps * batch_size // SEGMENT_REUSE_CAP
    return int(min(max(total, 10 * horizon), max(max_steps, 10 * horizon)))


def window_starts(total_steps: int, horizon: int) -> np.ndarray:
    stride = max(horizon // 4, 1)
    count = (total_steps - horizon) // stride + 1
    return np.arange(count) * stride


def expert_log(cfg: GenConfig) -> np.ndarray:
    """
    Continuous expert log: a new random goal is drawn each time the current one is reached
    Returns:
        (total_steps, transition_dim) rows of [action, state before the step]
    """
    spec = make_maze(cfg.maze_id)
    rng = numpy_rng(cfg.seed)
    start = sample_free_point(spec, rng)
    goal = sample_free_point(spec, rng, exclude=spec.cell_of(start))
    s = initial_state(start, goal)

    rows = np.empty((cfg.total_steps, ACTION_DIM + 4))
    goals_reached = 0
    for i in range(cfg.total_steps):
        a = expert_action(spec, s)
        rows[i, :ACTION_DIM] = a
        rows[i, ACTION_DIM:] = s.observation()
        s, reward = step(spec, s, a)
        if reward > 0:
            goals_reached += 1
            goal = sample_free_point(spec, rng, exclude=spec.cell_of(s.position))
            s = initial_state(s.position, goal, s.velocity)
    logger.info(f"Expert log for {cfg.maze_id}: {cfg.total_steps} steps, {goals_reached} goals reached")
    return rows


def generate(cfg: GenConfig) -> Dataset:
    """Window the expert log into overlapping horizon-length segments"""
    log = expert_log(cfg)
    starts = window_starts(cfg.total_steps, cfg.horizon)
    segments = np.stack([log[s:s + cfg.horizon] for s in starts])
    stats = NormalizationStats.fit(log)
    logger.info(f"Generated {len(segments)} segments of horizon {cfg.horizon} for {cfg.maze_id}")
    return Dataset(segments, stats, cfg.maze_id)


def conditioning_for(x0: torch.Tensor, action_dim: int = ACTION_DIM) -> Conditioning:
    """Endpoint states of each normalized segment in the batch"""
    return Conditioning(
        start=x0[:, 0, action_dim:].clone(),
        goal=x0[:, -1, action_dim:].clone(),
        action_dim=action_dim,
    )


def sample_batch(ds: Dataset, batch: int, rng: np.random.Generator,
                 action_dim: int = ACTION_DIM) -> Tuple[torch.Tensor, Conditioning]:
    """
    Draw `batch` normalized segments with replacement
    Returns:
        ((batch, horizon, dim) float64 tensor, Conditioning on their endpoint states)
    """
    if len(ds) == 0:
        raise EmptyDatasetError(f"dataset for {ds.maze_id!r} has no segments")
    idx = rng.integers(0, len(ds), size=batch)
    x0 = torch.from_numpy(np.array(ds.normalized_segments[idx]))
    return x0, conditioning_for(x0, action_dim)


def make_toy_dataset(n: int = 512, horizon: int = 16, seed: int = 0) -> Dataset:
    """
    Synthetic 1-D two-mode trajectories: half sit near 0.2, half near 0.8,
    each with a small sinusoidal wobble and noise.
    """
    rng = numpy_rng(seed)
    levels = np.where(rng.random(n) < 0.5, 0.2, 0.8)
    phase = rng.uniform(0, 2 * np.pi, size=n)
    t = np.linspace(0, 2 * np.pi, horizon)
    wobble = 0.03 * np.sin(t[None, :] + phase[:, None])
    segments = levels[:, None] + wobble + 0.01 * rng.standard_normal((n, horizon))
    segments = segments[:, :, None]
    return Dataset(segments, NormalizationStats.fit(segments), "toy")
