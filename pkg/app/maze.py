import logging
from collections import deque
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .constants.constants import (
    A_MAX,
    CELL_SIZE,
    DT,
    EPISODE_CAPS,
    EXPERT_BRAKE,
    EXPERT_CLEARANCE,
    EXPERT_LOOKAHEAD,
    EXPERT_TURN_SPEED,
    GOAL_RADIUS,
    KD,
    KP,
    MAZE_LAYOUTS,
    SIGHT_STEP,
    START_JITTER,
    V_MAX,
    WALL_MARGIN,
)
from .errors import ReferenceDegenerateError, UnknownMazeError, UnreachableGoalError
from .models import EpisodeResult
from .seeding import numpy_rng

logger = logging.getLogger(__name__)

Cell = Tuple[int, int]  # (row, col)
Policy = Callable[["MazeSpec", "SimState"], np.ndarray]

_NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class MazeSpec:
    id: str
    grid: Tuple[Tuple[bool, ...], ...]  # True = wall
    cell_size: float = CELL_SIZE
    goal_radius: float = GOAL_RADIUS
    episode_cap: int = 600

    @property
    def rows(self) -> int:
        return len(self.grid)

    @property
    def cols(self) -> int:
        return len(self.grid[0])

    @property
    def free_cells(self) -> List[Cell]:
        return [(r, c) for r in range(self.rows) for c in range(self.cols) if not self.grid[r][c]]

    def is_wall(self, cell: Cell) -> bool:
        r, c = cell
        if r < 0 or c < 0 or r >= self.rows or c >= self.cols:
            return True
        return self.grid[r][c]

    def cell_of(self, position: Sequence[float]) -> Cell:
        x, y = position
        return int(np.floor(y / self.cell_size)), int(np.floor(x / self.cell_size))

    def cell_center(self, cell: Cell) -> np.ndarray:
        r, c = cell
        return np.array([(c + 0.5) * self.cell_size, (r + 0.5) * self.cell_size])

    def is_free_position(self, position: Sequence[float]) -> bool:
        return not self.is_wall(self.cell_of(position))

    @cached_property
    def wall_mask(self) -> np.ndarray:
        return np.array(self.grid, dtype=bool)

    def walls_at(self, points: np.ndarray) -> np.ndarray:
        """Vectorized is_wall over an (n, 2) array of positions"""
        cells = np.floor(np.asarray(points, dtype=np.float64) / self.cell_size).astype(np.int64)
        cols, rows = cells[:, 0], cells[:, 1]
        inside = (rows >= 0) & (cols >= 0) & (rows < self.rows) & (cols < self.cols)
        hit = np.ones(len(cells), dtype=bool)
        hit[inside] = self.wall_mask[rows[inside], cols[inside]]
        return hit


@dataclass(frozen=True)
class SimState:
    position: np.ndarray
    velocity: np.ndarray
    goal: np.ndarray
    steps_elapsed: int = 0

    def observation(self) -> np.ndarray:
        """[x, y, vx, vy]"""
        return np.concatenate([self.position, self.velocity])


def maze_from_ascii(maze_id: str, lines: Sequence[str], cell_size: float = CELL_SIZE,
                    goal_radius: float = GOAL_RADIUS, episode_cap: Optional[int] = None) -> MazeSpec:
    """
    Parse a '#'/'.' layout and check the maze invariants
    Args:
        maze_id: identifier stored on the spec
        lines: one string per grid row
    Returns:
        MazeSpec with a walled border and one connected free region
    """
    rows = [line.strip() for line in lines if line.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError(f"maze {maze_id!r}: rows must be non-empty and equal length")
    if any(ch not in "#." for r in rows for ch in r):
        raise ValueError(f"maze {maze_id!r}: only '#' and '.' are allowed")
    grid = tuple(tuple(ch == "#" for ch in r) for r in rows)
    spec = MazeSpec(
        id=maze_id,
        grid=grid,
        cell_size=cell_size,
        goal_radius=goal_radius,
        episode_cap=episode_cap if episode_cap is not None else EPISODE_CAPS.get(maze_id, 600),
    )
    _validate(spec)
    return spec


def maze_to_ascii(spec: MazeSpec) -> str:
    return "\n".join("".join("#" if wall else "." for wall in row) for row in spec.grid)


def _validate(spec: MazeSpec) -> None:
    border = (
        list(spec.grid[0]) + list(spec.grid[-1])
        + [row[0] for row in spec.grid] + [row[-1] for row in spec.grid]
    )
    if not all(border):
        raise ValueError(f"maze {spec.id!r}: border must be all wall")
    free = spec.free_cells
    if len(free) < 2:
        raise ValueError(f"maze {spec.id!r}: needs at least 2 free cells")
    if len(_distances_from(spec, free[0])) != len(free):
        raise ValueError(f"maze {spec.id!r}: free cells are not 4-connected")


def make_maze(maze_id: str) -> MazeSpec:
    if maze_id not in MAZE_LAYOUTS:
        raise UnknownMazeError(f"unknown maze id {maze_id!r}; expected one of {sorted(MAZE_LAYOUTS)}")
    return maze_from_ascii(maze_id, MAZE_LAYOUTS[maze_id])


@lru_cache(maxsize=256)
def _distances_from(spec: MazeSpec, target: Cell) -> Dict[Cell, int]:
    # BFS over free cells
    dist = {target: 0}
    queue = deque([target])
    while queue:
        r, c = queue.popleft()
        for dr, dc in _NEIGHBOURS:
            nxt = (r + dr, c + dc)
            if nxt not in dist and not spec.is_wall(nxt):
                dist[nxt] = dist[(r, c)] + 1
                queue.append(nxt)
    return dist


def shortest_cell_path(spec: MazeSpec, start: Cell, goal: Cell) -> List[Cell]:
    """BFS shortest path of free cells from start to goal, both included"""
    dist = _distances_from(spec, goal)
    if start not in dist:
        raise UnreachableGoalError(f"cell {goal} unreachable from {start} in maze {spec.id!r}")
    path = [start]
    while path[-1] != goal:
        r, c = path[-1]
        for dr, dc in _NEIGHBOURS:
            nxt = (r + dr, c + dc)
            if dist.get(nxt) == dist[(r, c)] - 1:
                path.append(nxt)
                break
    return path


def clip_action(a: Sequence[float]) -> np.ndarray:
    return np.clip(np.asarray(a, dtype=np.float64), -A_MAX, A_MAX)


def step(spec: MazeSpec, s: SimState, a: Sequence[float]) -> Tuple[SimState, float]:
    """
    Advance the point mass by one semi-implicit Euler step
    Args:
        spec: maze the mass moves in
        s: current state (left untouched)
        a: planar force, clipped to [-A_MAX, A_MAX] per component
    Returns:
        (next state, reward) with reward 1 inside goal_radius else 0
    """
    a = clip_action(a)
    velocity = np.clip(s.velocity + a * DT, -V_MAX, V_MAX)
    position = s.position.copy()
    size = spec.cell_size

    # x then y, each against the cell the mass currently occupies
    for axis in (0, 1):
        moved = position.copy()
        moved[axis] += velocity[axis] * DT
        if spec.is_wall(spec.cell_of(moved)):
            index = int(np.floor(position[axis] / size))
            if velocity[axis] > 0:
                moved[axis] = (index + 1) * size - WALL_MARGIN
            else:
                moved[axis] = index * size + WALL_MARGIN
            velocity[axis] = 0.0
        position = moved

    reward = 1.0 if np.linalg.norm(position - s.goal) <= spec.goal_radius else 0.0
    return SimState(position, velocity, s.goal.copy(), s.steps_elapsed + 1), reward


def pd_action(target: np.ndarray, s: SimState, target_velocity: Optional[np.ndarray] = None,
              feedforward: Optional[np.ndarray] = None) -> np.ndarray:
    """Clipped PD law toward a reference position, at rest unless `target_velocity` is given"""
    error_v = -s.velocity if target_velocity is None else target_velocity - s.velocity
    a = KP * (target - s.position) + KD * error_v
    return clip_action(a if feedforward is None else a + feedforward)


_CORNER_SIGNS = np.array([[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]])


def sight_is_clear(spec: MazeSpec, origin: np.ndarray, target: np.ndarray) -> bool:
    """
    Straight segment origin -> target stays EXPERT_CLEARANCE away from walls.
    Points within 2 * EXPERT_CLEARANCE of origin only need to be free, so a mass
    resting against a wall can still see along it.
    """
    offset = np.asarray(target, dtype=np.float64) - origin
    length = float(np.linalg.norm(offset))
    frac = np.linspace(0.0, 1.0, max(2, int(np.ceil(length / SIGHT_STEP)) + 1))
    points = origin + frac[:, None] * offset
    pad = np.where(frac * length >= 2 * EXPERT_CLEARANCE, EXPERT_CLEARANCE, 0.0) * spec.cell_size
    samples = (points[:, None, :] + pad[:, None, None] * _CORNER_SIGNS[None]).reshape(-1, 2)
    return not spec.walls_at(samples).any()


def expert_target(spec: MazeSpec, s: SimState) -> Tuple[np.ndarray, float]:
    """
    Farthest point of the BFS cell path that is in clear sight of the mass
    Returns:
        (target, speed allowed when passing it). The goal is approached to a stop.
        Turns are taken at EXPERT_TURN_SPEED unless the straight continuation
        is a wall, which stops the mass on its own.
    """
    here = spec.cell_of(s.position)
    goal_cell = spec.cell_of(s.goal)
    if here == goal_cell:
        return s.goal.copy(), 0.0
    path = shortest_cell_path(spec, here, goal_cell)
    ahead = path[1:1 + EXPERT_LOOKAHEAD]

    def point(cell: Cell) -> np.ndarray:
        return s.goal.copy() if cell == goal_cell else spec.cell_center(cell)

    # the next cell is always reachable in a straight line, it shares an edge with `here`
    index = 0
    for i in range(1, len(ahead)):
        if not sight_is_clear(spec, s.position, point(ahead[i])):
            break
        index = i
    cell = ahead[index]
    if cell == goal_cell:
        return s.goal.copy(), 0.0
    prev = path[index]
    beyond = (2 * cell[0] - prev[0], 2 * cell[1] - prev[1])
    return spec.cell_center(cell), (V_MAX if spec.is_wall(beyond) else EXPERT_TURN_SPEED)


def next_waypoint(spec: MazeSpec, s: SimState) -> np.ndarray:
    """
    Waypoint on the sight line to the expert target, placed so that the PD law
    drives the mass at the speed it can still brake from before the target
    """
    target, pass_speed = expert_target(spec, s)
    offset = target - s.position
    dist = float(np.linalg.norm(offset))
    if dist < 1e-9:
        return target
    speed = min(V_MAX, pass_speed + np.sqrt(2.0 * EXPERT_BRAKE * dist))
    return s.position + (KD / KP) * speed * offset / dist


def expert_action(spec: MazeSpec, s: SimState) -> np.ndarray:
    """PD control toward the next waypoint along the BFS path to the goal"""
    return pd_action(next_waypoint(spec, s), s)


def random_action(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-A_MAX, A_MAX, size=2)


def sample_free_point(spec: MazeSpec, rng: np.random.Generator, exclude: Optional[Cell] = None) -> np.ndarray:
    """Free cell center with +-START_JITTER cell jitter, avoiding `exclude`"""
    cells = [c for c in spec.free_cells if c != exclude]
    cell = cells[int(rng.integers(len(cells)))]
    jitter = rng.uniform(-START_JITTER, START_JITTER, size=2) * spec.cell_size
    return spec.cell_center(cell) + jitter


def sample_task(spec: MazeSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """(start position, goal position) in distinct free cells"""
    start = sample_free_point(spec, rng)
    goal = sample_free_point(spec, rng, exclude=spec.cell_of(start))
    return start, goal


def initial_state(start: np.ndarray, goal: np.ndarray, velocity: Optional[np.ndarray] = None) -> SimState:
    velocity = np.zeros(2) if velocity is None else np.asarray(velocity, dtype=np.float64)
    return SimState(np.asarray(start, dtype=np.float64).copy(), velocity.copy(),
                    np.asarray(goal, dtype=np.float64).copy())


def rollout(spec: MazeSpec, s: SimState, policy: Policy, steps: Optional[int] = None,
            record: bool = False) -> Tuple[EpisodeResult, Optional[np.ndarray]]:
    """
    Run `policy` for the episode cap and add up rewards
    Args:
        spec: maze
        s: initial state
        policy: callable (spec, state) -> action
        steps: override of spec.episode_cap
        record: also return the visited [action, state] rows
    Returns:
        (EpisodeResult, rows or None)
    """
    steps = spec.episode_cap if steps is None else steps
    total, reached = 0.0, False
    rows = [] if record else None
    for _ in range(steps):
        a = clip_action(policy(spec, s))
        if record:
            rows.append(np.concatenate([a, s.observation()]))
        s, r = step(spec, s, a)
        total += r
        reached = reached or r > 0
    return EpisodeResult(total_reward=total, steps=steps, reached=reached), (
        np.array(rows) if record else None
    )


def normalized_score(total: float, random_ref: float, expert_ref: float) -> float:
    if expert_ref <= random_ref:
        raise ReferenceDegenerateError(
            f"expert reference {expert_ref} must exceed random reference {random_ref}"
        )
    return 100.0 * (total - random_ref) / (expert_ref - random_ref)


def episode_task(spec: MazeSpec, seed: int, episode: int) -> Tuple[np.ndarray, np.ndarray]:
    """Task of episode `episode`; shared by references and evaluation so pairs match"""
    return sample_task(spec, numpy_rng(seed, episode))


def compute_reference_scores(spec: MazeSpec, episodes: int, seed: int) -> Tuple[float, float]:
    """
    Mean episode reward of the uniform-random policy and of the expert
    Args:
        spec: maze
        episodes: number of matched (start, goal) pairs, at least 100
        seed: base seed; episode i uses stream (seed, i)
    Returns:
        (random_ref, expert_ref)
    """
    if episodes < 100:
        raise ValueError(f"reference scores need >= 100 episodes, got {episodes}")
    random_totals, expert_totals = [], []
    for i in range(episodes):
        start, goal = episode_task(spec, seed, i)
        action_rng = numpy_rng(seed, i, 1)
        res_random, _ = rollout(spec, initial_state(start, goal), lambda _spec, _s: random_action(action_rng))
        res_expert, _ = rollout(spec, initial_state(start, goal), expert_action)
        random_totals.append(res_random.total_reward)
        expert_totals.append(res_expert.total_reward)
    random_ref, expert_ref = float(np.mean(random_totals)), float(np.mean(expert_totals))
    logger.info(f"References for {spec.id}: random={random_ref:.2f} expert={expert_ref:.2f} over {episodes} episodes")
    return random_ref, expert_ref


def path_is_free(spec: MazeSpec, positions: np.ndarray, substeps: int = 4) -> bool:
    """True when every position, and points between consecutive positions, lie in free cells"""
    positions = np.asarray(positions, dtype=np.float64)
    for a, b in zip(positions[:-1], positions[1:]):
        for frac in np.linspace(0.0, 1.0, substeps + 1):
            if not spec.is_free_position(a + frac * (b - a)):
                return False
    return len(positions) > 0 and spec.is_free_position(positions[-1])
