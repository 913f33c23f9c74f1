import numpy as np
import pytest
import torch
from numpy.testing import assert_allclose

from app.constants.constants import DT, V_MAX
from app.errors import CheckpointError
from app.networks import build_denoiser, build_prior_network
from app.planner import make_conditioning
from app.priors import (
    PriorKind,
    build_prior_batch,
    gaussian_prior,
    learned_prior,
    prior_cost_report,
    straight_line_prior,
    straight_line_raw,
)
from app.seeding import torch_generator
from app.trajectory import normalize_array


def test_prior_kind_parse():
    assert PriorKind.parse("gaussian") == PriorKind("gaussian")
    learned = PriorKind.parse("learned:runs/prior.safetensors")
    assert learned.tag == "learned"
    assert learned.checkpoint == "runs/prior.safetensors"
    assert str(learned) == "learned"
    with pytest.raises(ValueError):
        PriorKind.parse("uniform")
    with pytest.raises(ValueError):
        PriorKind.parse("straight_line:foo")


def test_gaussian_prior_shape_and_seed():
    a = gaussian_prior(16, torch_generator(0), 6, batch=2)
    b = gaussian_prior(16, torch_generator(0), 6, batch=2)
    assert a.shape == (2, 16, 6)
    assert torch.equal(a, b)


def test_gaussian_prior_statistics():
    sample = gaussian_prior(1000, torch_generator(0), 6, batch=100)
    assert abs(sample.mean().item()) < 0.02
    per_dim = sample.reshape(-1, 6).var(dim=0)
    assert bool(((per_dim - 1.0).abs() < 0.03).all())


def test_straight_line_endpoints_and_velocity():
    start = np.array([1.5, 1.5, 0.3, -0.2])
    goal = np.array([4.5, 3.5])
    line = straight_line_raw(start, goal, 16)
    assert line.shape == (16, 6)
    assert_allclose(line[0, 2:4], start[:2])
    assert_allclose(line[-1, 2:4], goal)
    steps = np.diff(line[:, 2:4], axis=0)
    assert_allclose(steps, np.broadcast_to(steps[0], steps.shape))
    # constant velocity, capped at V_MAX
    assert_allclose(line[:, 4:], np.broadcast_to(line[0, 4:], (16, 2)))
    assert np.linalg.norm(line[0, 4:]) == pytest.approx(V_MAX)
    assert np.linalg.norm(line[0, :2]) == pytest.approx(1.0)


def test_straight_line_velocity_below_cap():
    line = straight_line_raw(np.array([1.5, 1.5, 0.0, 0.0]), np.array([1.6, 1.5]), 6)
    assert_allclose(line[0, 4:], [0.1 / (5 * DT), 0.0])


def test_straight_line_degenerate_task():
    line = straight_line_raw(np.array([2.0, 2.0, 0.0, 0.0]), np.array([2.0, 2.0]), 8)
    assert_allclose(line[:, :2], 0.0)
    assert_allclose(line[:, 4:], 0.0)
    assert_allclose(line[:, 2:4], 2.0)


def test_straight_line_prior_is_normalized(open_dataset):
    start, goal = np.array([1.5, 1.5, 0.0, 0.0]), np.array([5.5, 3.5])
    traj = straight_line_prior(start, goal, 16, open_dataset.stats)
    assert traj.normalized
    assert_allclose(traj.data, normalize_array(straight_line_raw(start, goal, 16), open_dataset.stats))


def test_learned_prior_requires_network():
    state = torch.zeros(1, 4, dtype=torch.float64)
    with pytest.raises(CheckpointError):
        learned_prior(None, state, state)
    traj = learned_prior(build_prior_network(16, 6), state, state)
    assert traj.horizon == 16 and traj.normalized


def test_prior_batch_for_every_kind(open_dataset):
    starts = np.array([[1.5, 1.5, 0.0, 0.0], [2.5, 3.5, 0.1, 0.0]])
    goals = np.array([[5.5, 3.5], [1.5, 1.5]])
    cond = make_conditioning(starts, goals, open_dataset.stats)
    pnet = build_prior_network(16, 6)
    for tag in ("gaussian", "straight_line", "learned"):
        x1 = build_prior_batch(PriorKind(tag), cond, open_dataset.stats, 16, torch_generator(0), pnet)
        assert x1.shape == (2, 16, 6)
        assert x1.dtype == torch.float64

    lines = build_prior_batch(PriorKind("straight_line"), cond, open_dataset.stats, 16, torch_generator(0))
    assert torch.allclose(lines[:, 0, 2:4], cond.start[:, :2])
    assert torch.allclose(lines[:, -1, 2:4], cond.goal[:, :2])
    with pytest.raises(CheckpointError):
        build_prior_batch(PriorKind("learned"), cond, open_dataset.stats, 16, torch_generator(0))


def test_prior_cost_report(open_dataset):
    denoiser = build_denoiser(32, 6)
    pnet = build_prior_network(32, 6)
    with pytest.raises(ValueError):
        prior_cost_report(PriorKind("learned"), 10, denoiser, open_dataset.stats, pnet)
    report = prior_cost_report(PriorKind("learned"), 100, denoiser, open_dataset.stats, pnet)
    assert report.kind == "learned"
    assert report.samples == 100
    assert report.seconds_per_sample > 0 and report.denoiser_forward_seconds > 0
    assert report.ratio < 1.0
    assert report.within_budget == (report.ratio < 0.01)
