import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from .constants.constants import ACTION_DIM, DT
from .ddpm import NoiseSchedule, SampleOutput, ddpm_sample, make_schedule
from .errors import CheckpointError, EngineMismatchError, NFEError
from .i2sb import BridgeSchedule, bridge_sample, make_bridge_schedule
from .maze import MazeSpec, initial_state, pd_action, step
from .models import EpisodeResult, PlanDump, PlanRequest
from .networks import DenoiserNetwork, PriorNetwork, load_network
from .preprocessors.storage import atomic_write_text
from .priors import PriorKind, build_prior_batch
from .seeding import torch_generator
from .trajectory import Conditioning, NormalizationStats, Trajectory, denormalize_array, normalize_array

logger = logging.getLogger(__name__)


@dataclass
class PlannerModel:
    """A trained denoiser with everything needed to plan with it"""

    engine: str
    net: DenoiserNetwork
    schedule: Union[NoiseSchedule, BridgeSchedule]
    stats: NormalizationStats
    maze_id: str
    prior: PriorKind
    prior_net: Optional[PriorNetwork] = None
    training_steps: int = 0
    seed: int = 0

    @property
    def horizon(self) -> int:
        return self.net.horizon

    @property
    def n_steps(self) -> int:
        return self.schedule.n_steps


def goal_state(goal_position: Sequence[float]) -> np.ndarray:
    """Goal row state: the position at rest"""
    return np.array([goal_position[0], goal_position[1], 0.0, 0.0])


def make_conditioning(starts: np.ndarray, goals: np.ndarray, stats: NormalizationStats) -> Conditioning:
    """Normalized conditioning from raw start states (B, 4) and goal positions (B, 2)"""
    state_stats = stats.select(ACTION_DIM, stats.dim)
    goal_states = np.stack([goal_state(g) for g in goals])
    return Conditioning(
        start=torch.from_numpy(normalize_array(starts, state_stats)),
        goal=torch.from_numpy(normalize_array(goal_states, state_stats)),
    )


def _check_request(model: PlannerModel, engine: str, nfe: int) -> None:
    if engine != model.engine:
        raise EngineMismatchError(f"request engine {engine!r} does not match checkpoint engine {model.engine!r}")
    if engine == "ddpm" and nfe != model.n_steps:
        raise NFEError(f"ddpm evaluates the net once per step: nfe must equal N={model.n_steps}, got {nfe}")
    if engine == "i2sb" and not 1 <= nfe <= model.n_steps:
        raise NFEError(f"nfe must lie in [1, {model.n_steps}], got {nfe}")


def plan_batch(model: PlannerModel, starts: np.ndarray, goals: np.ndarray, nfe: int,
               generators: List[torch.Generator]) -> Tuple[np.ndarray, SampleOutput]:
    """
    Inpainted plans for a batch of tasks
    Args:
        model: trained planner bundle
        starts: (B, 4) raw start states
        goals: (B, 2) raw goal positions
        nfe: network evaluations per plan
        generators: one torch generator per task
    Returns:
        ((B, horizon, 6) raw-unit plans with exact endpoint states, sampler output)
    """
    _check_request(model, model.engine, nfe)
    starts = np.asarray(starts, dtype=np.float64)
    goals = np.asarray(goals, dtype=np.float64)
    cond = make_conditioning(starts, goals, model.stats)
    shape = (len(starts), model.horizon, model.stats.dim)
    if model.engine == "ddpm":
        out = ddpm_sample(model.net, model.schedule, shape, cond, generators)
    else:
        x1 = build_prior_batch(model.prior, cond, model.stats, model.horizon, generators, model.prior_net)
        out = bridge_sample(model.net, model.schedule, x1, nfe, cond, generators)
    raw = denormalize_array(out.trajectories.numpy(), model.stats)
    raw[:, 0, ACTION_DIM:] = starts
    raw[:, -1, ACTION_DIM:] = np.stack([goal_state(g) for g in goals])
    return raw, out


def plan(req: PlanRequest, model: PlannerModel) -> Tuple[Trajectory, int]:
    """
    Plan one trajectory for the request
    Returns:
        (raw-unit Trajectory, network evaluations used)
    """
    _check_request(model, req.engine, req.nfe)
    if req.engine == "i2sb" and PriorKind.parse(req.prior).tag != model.prior.tag:
        raise EngineMismatchError(f"checkpoint was trained with prior {model.prior.tag!r}, not {req.prior!r}")
    raw, out = plan_batch(
        model,
        np.array([req.start_state]),
        np.array([req.goal_position]),
        req.nfe,
        [torch_generator(req.seed)],
    )
    return Trajectory(raw[0]), out.nfe


def execute(spec: MazeSpec, plan: Trajectory, goal: Optional[Sequence[float]] = None,
            steps: Optional[int] = None) -> EpisodeResult:
    """
    Track the plan's states open-loop, one row per simulator step
    Args:
        spec: maze the plan is executed in
        plan: raw-unit plan
        goal: rewarded goal position, the plan's last position by default
        steps: episode length, the maze cap by default
    Returns:
        EpisodeResult with rewards accumulated over the whole episode

    Step k applies PD feedback toward row k plus the acceleration that takes
    row k's velocity to row k+1's. Past the last row the controller holds the
    final position at rest.
    """
    steps = spec.episode_cap if steps is None else steps
    states = plan.states()
    last = plan.horizon - 1
    goal = states[last, :2] if goal is None else np.asarray(goal, dtype=np.float64)
    s = initial_state(states[0, :2], goal, states[0, 2:])

    total, reached = 0.0, False
    for k in range(steps):
        if k < last:
            ref, nxt = states[k], states[k + 1]
            action = pd_action(ref[:2], s, ref[2:], (nxt[2:] - ref[2:]) / DT)
        else:
            action = pd_action(states[last, :2], s)
        s, reward = step(spec, s, action)
        total += reward
        reached = reached or reward > 0
    return EpisodeResult(total_reward=total, steps=steps, reached=reached)


def plan_dump(traj: Trajectory, req: PlanRequest, model: PlannerModel, nfe: int, seconds: float) -> PlanDump:
    return PlanDump(
        maze_id=model.maze_id,
        engine=model.engine,
        prior=model.prior.tag if model.engine == "i2sb" else "gaussian",
        n_steps=model.n_steps,
        nfe=nfe,
        seed=req.seed,
        horizon=traj.horizon,
        plan_seconds=seconds,
        rows=traj.data.tolist(),
    )


def timed_plan(req: PlanRequest, model: PlannerModel) -> Tuple[Trajectory, PlanDump]:
    start = time.perf_counter()
    traj, nfe = plan(req, model)
    return traj, plan_dump(traj, req, model, nfe, time.perf_counter() - start)


def save_plan_dump(path: Path, dump: PlanDump) -> Path:
    path = atomic_write_text(Path(path), json.dumps(dump.model_dump(), indent=2))
    logger.info(f"Wrote plan {path}")
    return path


def load_planner_model(path: Path) -> PlannerModel:
    """
    Rebuild a planner bundle from a denoiser checkpoint and, for the learned
    prior, the prior checkpoint named in its header
    """
    path = Path(path)
    net, meta = load_network(path, expected_kind="denoiser")
    for key in ("engine", "n_steps", "stats", "maze_id", "prior"):
        if key not in meta:
            raise CheckpointError(f"{path} header lacks {key!r}")
    engine = meta["engine"]
    if engine == "ddpm":
        schedule = make_schedule(meta["n_steps"], meta.get("schedule", "linear"))
    else:
        schedule = make_bridge_schedule(meta["n_steps"])
    stats = NormalizationStats(np.array(meta["stats"]["mins"]), np.array(meta["stats"]["maxs"]))
    prior = PriorKind.parse(meta["prior"])
    prior_net = None
    if engine == "i2sb" and prior.tag == "learned":
        prior_path = prior.checkpoint or meta.get("prior_checkpoint")
        if not prior_path:
            raise CheckpointError(f"{path} uses the learned prior but names no prior checkpoint")
        prior_path = Path(prior_path)
        if not prior_path.is_absolute():
            prior_path = path.parent / prior_path
        prior_net, _ = load_network(prior_path, expected_kind="prior")
    return PlannerModel(
        engine=engine,
        net=net,
        schedule=schedule,
        stats=stats,
        maze_id=meta["maze_id"],
        prior=prior,
        prior_net=prior_net,
        training_steps=meta.get("training_steps", 0),
        seed=meta.get("seed", 0),
    )


# (maze_id, engine, prior, n_steps, training_steps, seed)
ModelKey = Tuple[str, str, str, int, int, int]


class PlannerService:
    """Keeps loaded planner models for the HTTP service"""

    def __init__(self):
        self.models: Dict[ModelKey, PlannerModel] = {}
        self.initialized = False

    @staticmethod
    def key(model: PlannerModel) -> ModelKey:
        prior = model.prior.tag if model.engine == "i2sb" else "gaussian"
        return model.maze_id, model.engine, prior, model.n_steps, model.training_steps, model.seed

    def register(self, model: PlannerModel) -> None:
        self.models[self.key(model)] = model
        self.initialized = True

    async def initialize(self, checkpoint_dir: Optional[Path]):
        """Load every denoiser checkpoint in `checkpoint_dir`; unreadable ones are skipped"""
        if checkpoint_dir is None:
            raise CheckpointError("no checkpoint directory configured")
        for path in sorted(Path(checkpoint_dir).glob("*.safetensors")):
            if path.name.startswith("prior_"):
                continue
            try:
                self.register(load_planner_model(path))
            except CheckpointError as e:
                logger.warning(f"Skipping checkpoint {path.name}: {e}")
        self.initialized = True
        logger.info(f"Planner service ready with {len(self.models)} models")

    def find(self, req: PlanRequest) -> PlannerModel:
        """
        Model for the request; DDPM models are keyed by N = nfe.
        Among matches the largest N wins, then the longest training, then the lowest seed.
        """
        prior = PriorKind.parse(req.prior).tag
        n_steps = req.nfe if req.engine == "ddpm" else None
        ranked = sorted(self.models.items(), key=lambda kv: (-kv[0][3], -kv[0][4], kv[0][5]))
        for (maze_id, engine, model_prior, n, _, _), model in ranked:
            if (maze_id, engine) != (req.maze_id, req.engine):
                continue
            if engine == "i2sb" and model_prior != prior:
                continue
            if n_steps is not None and n != n_steps:
                continue
            if engine == "i2sb" and req.nfe > n:
                continue
            return model
        raise CheckpointError(
            f"no {req.engine} model for maze {req.maze_id!r} (prior {prior!r}, nfe {req.nfe})"
        )


planner_service = PlannerService()
