import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.constants.constants import (
    A_MAX,
    DT,
    EXPERT_BRAKE,
    EXPERT_TURN_SPEED,
    GOAL_RADIUS,
    KD,
    KP,
    MAZE_LAYOUTS,
    V_MAX,
    WALL_MARGIN,
)
from app.errors import ReferenceDegenerateError, UnknownMazeError, UnreachableGoalError
from app.maze import (
    MazeSpec,
    compute_reference_scores,
    episode_task,
    expert_action,
    expert_target,
    initial_state,
    make_maze,
    maze_from_ascii,
    maze_to_ascii,
    next_waypoint,
    normalized_score,
    path_is_free,
    random_action,
    rollout,
    sample_task,
    shortest_cell_path,
    sight_is_clear,
    step,
)
from app.seeding import numpy_rng


@pytest.mark.parametrize("maze_id", sorted(MAZE_LAYOUTS))
def test_builtin_mazes_are_valid(maze_id):
    spec = make_maze(maze_id)
    assert spec.id == maze_id
    assert len(spec.free_cells) >= 2
    assert maze_to_ascii(spec) == "\n".join(MAZE_LAYOUTS[maze_id])


def test_unknown_maze():
    with pytest.raises(UnknownMazeError):
        make_maze("spiral")


@pytest.mark.parametrize("lines", [
    ("#...#", "#####"),                      # open border
    ("#####", "#.#.#", "#####"),             # disconnected
    ("###", "#.#", "###"),                   # single free cell
    ("#####", "#..x#", "#####"),             # bad character
])
def test_invalid_layouts(lines):
    with pytest.raises(ValueError):
        maze_from_ascii("bad", lines)


def test_cell_geometry():
    spec = make_maze("open")
    assert spec.cell_of((2.4, 1.7)) == (1, 2)
    assert_allclose(spec.cell_center((1, 2)), [2.5, 1.5])
    assert spec.is_wall((0, 0))
    assert spec.is_wall((-1, 3))
    assert not spec.is_free_position((0.5, 0.5))
    assert spec.is_free_position((1.5, 1.5))


def test_shortest_path_follows_the_u():
    spec = make_maze("umaze")
    path = shortest_cell_path(spec, (1, 1), (3, 1))
    assert path == [(1, 1), (1, 2), (1, 3), (2, 3), (3, 3), (3, 2), (3, 1)]


def test_shortest_path_unreachable():
    spec = make_maze("umaze")
    with pytest.raises(UnreachableGoalError):
        shortest_cell_path(spec, (0, 0), (1, 1))


def test_step_free_motion():
    spec = make_maze("open")
    s = initial_state(np.array([3.0, 2.0]), np.array([5.5, 3.5]), np.array([1.0, 0.0]))
    nxt, reward = step(spec, s, [0.0, 0.0])
    assert_allclose(nxt.position, [3.0 + DT, 2.0])
    assert_allclose(nxt.velocity, [1.0, 0.0])
    assert nxt.steps_elapsed == 1
    assert reward == 0.0
    # input state untouched
    assert_allclose(s.position, [3.0, 2.0])


def test_step_clips_action():
    spec = make_maze("open")
    s = initial_state(np.array([3.0, 2.0]), np.array([5.5, 3.5]))
    nxt, _ = step(spec, s, [10.0, -10.0])
    assert_allclose(nxt.velocity, [A_MAX * DT, -A_MAX * DT])


def test_step_wall_collision_zeroes_velocity():
    spec = make_maze("open")
    s = initial_state(np.array([1.01, 2.0]), np.array([5.5, 3.5]), np.array([-5.0, 0.5]))
    nxt, _ = step(spec, s, [0.0, 0.0])
    assert nxt.position[0] == pytest.approx(1.0 + WALL_MARGIN)
    assert nxt.velocity[0] == 0.0
    assert nxt.velocity[1] == pytest.approx(0.5)
    assert spec.is_free_position(nxt.position)


def test_step_reward_inside_goal_radius():
    spec = make_maze("open")
    s = initial_state(np.array([3.0, 2.0]), np.array([3.2, 2.2]))
    _, reward = step(spec, s, [0.0, 0.0])
    assert reward == 1.0


@pytest.mark.parametrize("maze_id", ["umaze", "medium"])
def test_random_walk_never_enters_walls(maze_id):
    spec = make_maze(maze_id)
    rng = numpy_rng(7)
    start, goal = sample_task(spec, rng)
    s = initial_state(start, goal)
    for _ in range(3000):
        s, _ = step(spec, s, random_action(rng))
        assert spec.is_free_position(s.position)


def test_sample_task_uses_distinct_free_cells():
    spec = make_maze("umaze")
    rng = numpy_rng(3)
    for _ in range(50):
        start, goal = sample_task(spec, rng)
        assert spec.is_free_position(start) and spec.is_free_position(goal)
        assert spec.cell_of(start) != spec.cell_of(goal)


def test_episode_task_is_reproducible():
    spec = make_maze("umaze")
    a = episode_task(spec, 5, 11)
    b = episode_task(spec, 5, 11)
    assert_allclose(a[0], b[0])
    assert_allclose(a[1], b[1])


def test_expert_reaches_goals_in_open_maze():
    spec = make_maze("open")
    reached = 0
    for i in range(20):
        start, goal = episode_task(spec, 0, i)
        result, _ = rollout(spec, initial_state(start, goal), expert_action)
        reached += result.reached
    assert reached >= 19


def test_rollout_records_rows():
    spec = make_maze("open")
    start, goal = episode_task(spec, 0, 0)
    result, rows = rollout(spec, initial_state(start, goal), expert_action, steps=25, record=True)
    assert result.steps == 25
    assert rows.shape == (25, 6)
    assert_allclose(rows[0, 2:4], start)
    assert np.all(np.abs(rows[:, :2]) <= A_MAX)


def test_normalized_score():
    assert normalized_score(10.0, 10.0, 50.0) == 0.0
    assert normalized_score(50.0, 10.0, 50.0) == 100.0
    assert normalized_score(30.0, 10.0, 50.0) == 50.0
    with pytest.raises(ReferenceDegenerateError):
        normalized_score(1.0, 5.0, 5.0)


def test_reference_scores_need_enough_episodes():
    with pytest.raises(ValueError):
        compute_reference_scores(make_maze("open"), 10, 0)


def test_path_is_free():
    spec = make_maze("umaze")
    assert path_is_free(spec, np.array([[1.5, 1.5], [3.5, 1.5], [3.5, 3.5]]))
    # straight across the inner wall
    assert not path_is_free(spec, np.array([[1.5, 1.5], [1.5, 3.5]]))


def test_walls_at_matches_is_wall():
    spec = make_maze("medium")
    rng = numpy_rng(2)
    points = rng.uniform(-0.5, 8.5, size=(200, 2))
    expected = [spec.is_wall(spec.cell_of(p)) for p in points]
    assert spec.walls_at(points).tolist() == expected


def test_sight_lines():
    spec = make_maze("umaze")
    assert sight_is_clear(spec, np.array([1.5, 1.5]), np.array([3.5, 1.5]))
    # cuts the corner of the inner wall
    assert not sight_is_clear(spec, np.array([1.5, 1.5]), np.array([3.5, 2.5]))
    # resting against the top wall, looking along it
    assert sight_is_clear(spec, np.array([1.5, 1.0 + WALL_MARGIN]), np.array([1.5, 1.2]))


def test_expert_heads_straight_for_a_visible_goal():
    spec = make_maze("open")
    s = initial_state(np.array([1.5, 1.5]), np.array([5.5, 3.5]))
    target, pass_speed = expert_target(spec, s)
    assert_allclose(target, s.goal)
    assert pass_speed == 0.0
    offset = next_waypoint(spec, s) - s.position
    heading = s.goal - s.position
    assert offset[0] * heading[1] - offset[1] * heading[0] == pytest.approx(0.0, abs=1e-12)
    assert offset @ heading > 0
    # far from the goal both components saturate
    assert_allclose(expert_action(spec, s), [A_MAX, A_MAX])


def test_expert_skips_to_the_last_visible_cell():
    spec = make_maze("umaze")
    # (1,1) -> (3,1) goes round the inner wall; (1,3) is the farthest cell in sight
    s = initial_state(np.array([1.5, 1.5]), np.array([1.5, 3.5]))
    target, pass_speed = expert_target(spec, s)
    assert_allclose(target, spec.cell_center((1, 3)))
    # the outer wall behind (1,3) stops the mass, no braking needed
    assert pass_speed == V_MAX
    assert_allclose(expert_action(spec, s), [A_MAX, 0.0])


def test_expert_brakes_for_open_turns():
    spec = make_maze("large")
    # along row 3 then up column 4; cell (3,5) past the turn is free
    s = initial_state(np.array([2.5, 3.5]), np.array([4.5, 1.5]))
    target, pass_speed = expert_target(spec, s)
    assert_allclose(target, spec.cell_center((3, 4)))
    assert pass_speed == EXPERT_TURN_SPEED
    speed = EXPERT_TURN_SPEED + np.sqrt(2 * EXPERT_BRAKE * 2.0)
    assert_allclose(next_waypoint(spec, s), [2.5 + KD / KP * speed, 3.5])


def test_expert_rests_at_the_goal():
    spec = make_maze("open")
    goal = np.array([3.6, 2.4])
    at_goal = initial_state(goal, goal)
    assert_allclose(expert_action(spec, at_goal), [0.0, 0.0])
    near = initial_state(goal + np.array([0.3, -0.2]), goal)
    assert np.linalg.norm(expert_action(spec, near)) <= KP * GOAL_RADIUS


@pytest.mark.slow
@pytest.mark.parametrize("maze_id", sorted(MAZE_LAYOUTS))
def test_expert_success_rate(maze_id):
    spec: MazeSpec = make_maze(maze_id)
    reached = 0
    for i in range(200):
        start, goal = episode_task(spec, 0, i)
        result, _ = rollout(spec, initial_state(start, goal), expert_action)
        reached += result.reached
    assert reached >= 190
