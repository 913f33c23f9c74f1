import pytest
import torch

from app.dataset_gen import conditioning_for
from app.errors import NFEError, ScheduleError
from app.i2sb import (
    bridge_loss,
    bridge_posterior,
    bridge_sample,
    bridge_sample_training,
    gaussian_product_coef,
    make_bridge_schedule,
    sampling_grid,
)
from app.seeding import torch_generator
from tests.stubs import OracleBridgeNet, ZeroNet, x0_batch


def test_schedule_accumulates_to_total_variance():
    sched = make_bridge_schedule(8)
    assert sched.sigma2[0].item() == 0.0
    assert sched.sigma2[-1].item() == pytest.approx(1.0)
    assert sched.sigma2_bar[-1].item() == 0.0
    assert torch.allclose(sched.beta, sched.beta.flip(0))
    assert sched.sigma2[4].item() == pytest.approx(0.5)
    with pytest.raises(ScheduleError):
        make_bridge_schedule(0)


def test_gaussian_product_weights_sum_to_one():
    w0, w1, var = gaussian_product_coef(torch.tensor(0.25), torch.tensor(0.75))
    assert (w0 + w1).item() == pytest.approx(1.0)
    assert w0.item() == pytest.approx(0.75)
    assert var.item() == pytest.approx(0.25 * 0.75)


def test_posterior_pins_endpoints():
    sched = make_bridge_schedule(6)
    x0, x1 = x0_batch(seed=0), x0_batch(seed=1)
    mu, var = bridge_posterior(x0, x1, 0, sched)
    assert torch.allclose(mu, x0) and float(var.max()) == 0.0
    mu, var = bridge_posterior(x0, x1, 6, sched)
    assert torch.allclose(mu, x1) and float(var.max()) == 0.0
    mu, var = bridge_posterior(x0, x1, 3, sched)
    assert torch.allclose(mu, 0.5 * (x0 + x1))
    assert var.shape == (3, 1, 1)
    with pytest.raises(ValueError):
        bridge_posterior(x0, x1[:, :4], 3, sched)
    with pytest.raises(ScheduleError):
        bridge_posterior(x0, x1, 7, sched)


def test_training_sample_uses_given_noise():
    sched = make_bridge_schedule(6)
    x0, x1 = x0_batch(seed=0), x0_batch(seed=1)
    noise = torch.ones_like(x0)
    mu, var = bridge_posterior(x0, x1, 2, sched)
    out = bridge_sample_training(x0, x1, 2, torch_generator(0), sched, noise=noise)
    assert torch.allclose(out, mu + var.sqrt())


def test_sampling_grid():
    assert sampling_grid(16, 4) == [16, 12, 8, 4, 0]
    assert sampling_grid(16, 1) == [16, 0]
    assert sampling_grid(10, 3) == [10, 7, 3, 0]
    assert sampling_grid(8, 4, stop_at=4) == [8, 7, 6, 5, 4]


def test_nfe_bounds():
    sched = make_bridge_schedule(4)
    x1 = x0_batch()
    for nfe in (0, 5):
        with pytest.raises(NFEError):
            bridge_sample(ZeroNet(), sched, x1, nfe, None, torch_generator(0))
    with pytest.raises(NFEError):
        bridge_sample(ZeroNet(), sched, x1, 3, None, torch_generator(0), stop_at=2)


@pytest.mark.parametrize("nfe", [1, 2, 4])
def test_sampler_counts_evaluations_and_keeps_conditioning(nfe):
    sched = make_bridge_schedule(4)
    x0 = x0_batch()
    cond = conditioning_for(x0)
    out = bridge_sample(ZeroNet(), sched, x0_batch(seed=3), nfe, cond, torch_generator(0))
    assert out.nfe == nfe
    assert cond.satisfied_by(out.trajectories)


@pytest.mark.parametrize("stochastic", [True, False])
def test_oracle_recovers_target(stochastic):
    sched = make_bridge_schedule(8)
    x0, x1 = x0_batch(seed=0), x0_batch(seed=1)
    for nfe in (1, 3, 8):
        out = bridge_sample(OracleBridgeNet(x0, sched), sched, x1, nfe, conditioning_for(x0),
                            torch_generator(0), stochastic=stochastic)
        assert torch.allclose(out.trajectories, x0, atol=1e-10)


def test_zero_prediction_returns_prior_mean_path():
    # a zero net claims x0 = x_s, so the deterministic chain never moves
    sched = make_bridge_schedule(4)
    x1 = x0_batch(seed=4)
    out = bridge_sample(ZeroNet(), sched, x1, 4, None, torch_generator(0), stochastic=False)
    assert torch.allclose(out.trajectories, x1)


def test_stochastic_chain_matches_bridge_marginal():
    sched = make_bridge_schedule(8)
    x0 = torch.zeros(4000, 4, 1, dtype=torch.float64)
    x1 = torch.ones_like(x0)
    out = bridge_sample(OracleBridgeNet(x0, sched), sched, x1, 4, None, torch_generator(11), stop_at=4)
    mu, var = bridge_posterior(x0[:1], x1[:1], 4, sched)
    samples = out.trajectories.flatten()
    assert samples.mean().item() == pytest.approx(mu.mean().item(), abs=0.02)
    assert samples.var().item() == pytest.approx(var.item(), abs=0.02)


def test_marginal_does_not_depend_on_jump_count():
    # with an exact x0 estimate every jump composition lands on q(x_16 | x0, x1)
    sched = make_bridge_schedule(32)
    x0 = torch.zeros(20000, 8, 1, dtype=torch.float64)
    x1 = torch.ones_like(x0)
    mu, var = bridge_posterior(x0[:1], x1[:1], 16, sched)
    mu, var = mu.mean().item(), var.item()
    std = var ** 0.5
    stats = {}
    for nfe in (1, 4, 16):
        out = bridge_sample(OracleBridgeNet(x0, sched), sched, x1, nfe, None, torch_generator(21, nfe), stop_at=16)
        assert out.nfe == nfe
        samples = out.trajectories.flatten()
        stats[nfe] = (samples.mean().item(), samples.var().item())
        assert abs(stats[nfe][0] - mu) < 0.01 * std
        assert abs(stats[nfe][1] / var - 1.0) < 0.03
    for nfe in (1, 4):
        assert abs(stats[nfe][0] - stats[16][0]) < 0.02 * std
        assert abs(stats[nfe][1] / stats[16][1] - 1.0) < 0.03


def test_loss_is_zero_for_oracle():
    sched = make_bridge_schedule(8)
    x0, x1 = x0_batch(seed=0), x0_batch(seed=1)
    loss, grad = bridge_loss(OracleBridgeNet(x0, sched), x0, x1, conditioning_for(x0), torch_generator(0), sched)
    assert loss.item() == pytest.approx(0.0, abs=1e-18)
    assert grad is None


def test_loss_targets_scaled_displacement():
    sched = make_bridge_schedule(4)
    x0, x1 = x0_batch(2, seed=0), x0_batch(2, seed=1)
    noise = torch.zeros_like(x0)
    t = torch.tensor([2, 2])
    loss, _ = bridge_loss(ZeroNet(), x0, x1, None, torch_generator(0), sched, t=t, noise=noise)
    mu, _ = bridge_posterior(x0, x1, t, sched)
    target = (mu - x0) / sched.sigma[2]
    assert loss.item() == pytest.approx(float((target ** 2).sum() / 2))
    with pytest.raises(ScheduleError):
        bridge_loss(ZeroNet(), x0, x1, None, torch_generator(0), sched, t=torch.tensor([0, 1]))


def test_loss_gradient_for_real_network(small_net):
    sched = make_bridge_schedule(4)
    x0, x1 = x0_batch(2, 16, 6, seed=0), x0_batch(2, 16, 6, seed=1)
    loss, grad = bridge_loss(small_net, x0, x1, conditioning_for(x0), torch_generator(0), sched)
    assert loss.item() > 0
    assert grad is not None and bool(torch.isfinite(grad).all())
