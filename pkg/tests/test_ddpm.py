import pytest
import torch

from app.dataset_gen import conditioning_for
from app.ddpm import BETA_CEILING, ddpm_sample, loss_simple, make_schedule, p_sample_step, q_sample
from app.errors import ScheduleError
from app.seeding import torch_generator
from tests.stubs import ConstantNet, OracleEpsNet, ZeroNet, x0_batch


def test_linear_schedule_defaults():
    sched = make_schedule(1000)
    assert sched.beta[0].item() == pytest.approx(1e-4)
    assert sched.beta[-1].item() == pytest.approx(0.02)
    assert bool((sched.alpha_bar[1:] < sched.alpha_bar[:-1]).all())
    assert sched.posterior_variance[0].item() == 0.0


def test_linear_schedule_scales_with_steps():
    sched = make_schedule(10)
    assert bool((sched.beta < 1).all())
    assert sched.beta[-1].item() == pytest.approx(BETA_CEILING)
    single = make_schedule(1)
    assert single.beta.tolist() == [BETA_CEILING]


def test_cosine_schedule():
    sched = make_schedule(16, "cosine")
    assert bool((sched.beta <= BETA_CEILING).all())
    assert bool((sched.beta > 0).all())
    assert bool((sched.alpha_bar[1:] < sched.alpha_bar[:-1]).all())


@pytest.mark.parametrize("kwargs", [
    {"n_steps": 0},
    {"n_steps": 4, "kind": "quadratic"},
    {"n_steps": 4, "beta_min": 0.1, "beta_max": 1.5},
])
def test_schedule_errors(kwargs):
    with pytest.raises(ScheduleError):
        make_schedule(**kwargs)


def test_constant_beta_has_closed_form():
    sched = make_schedule(6, beta_min=0.1, beta_max=0.1)
    expected = 0.9 ** torch.arange(1, 7, dtype=torch.float64)
    assert torch.allclose(sched.alpha_bar, expected, rtol=0, atol=1e-12)


@pytest.mark.parametrize("n_steps", [16, 64, 1000])
def test_short_schedules_reach_noise(n_steps):
    assert make_schedule(n_steps).alpha_bar[-1].item() < 0.1
    assert make_schedule(n_steps, "cosine").alpha_bar[-1].item() < 0.1


def test_q_sample_moments():
    sched = make_schedule(16)
    x0 = torch.full((100_000, 1, 1), 0.7, dtype=torch.float64)
    eps = torch.randn(x0.shape, generator=torch_generator(0), dtype=torch.float64)
    for t in (1, 8, 16):
        a_bar = sched.alpha_bar[t - 1].item()
        out = q_sample(x0, t, eps, sched)
        std = (1.0 - a_bar) ** 0.5
        assert abs(out.mean().item() - a_bar ** 0.5 * 0.7) < 0.01 * std
        assert out.var().item() == pytest.approx(1.0 - a_bar, rel=0.03)


def test_q_sample_without_noise_scales_signal():
    sched = make_schedule(8)
    x0 = x0_batch()
    out = q_sample(x0, 3, torch.zeros_like(x0), sched)
    assert torch.allclose(out, sched.alpha_bar[2].sqrt() * x0)
    with pytest.raises(ScheduleError):
        q_sample(x0, 0, torch.zeros_like(x0), sched)


def test_final_reverse_step_is_deterministic():
    sched = make_schedule(4)
    x = x0_batch()
    a = p_sample_step(ConstantNet(0.3), x, 1, sched, torch_generator(0))
    b = p_sample_step(ConstantNet(0.3), x, 1, sched, torch_generator(1))
    assert torch.equal(a, b)
    c = p_sample_step(ConstantNet(0.3), x, 2, sched, torch_generator(0))
    d = p_sample_step(ConstantNet(0.3), x, 2, sched, torch_generator(1))
    assert not torch.equal(c, d)


def test_reverse_step_rejects_t_zero():
    with pytest.raises(ScheduleError):
        p_sample_step(ZeroNet(), x0_batch(), 0, make_schedule(4), torch_generator(0))


def test_sampler_uses_one_evaluation_per_step():
    sched = make_schedule(7)
    x0 = x0_batch()
    out = ddpm_sample(ZeroNet(), sched, tuple(x0.shape), conditioning_for(x0), torch_generator(0))
    assert out.nfe == 7
    assert out.trajectories.shape == x0.shape
    assert conditioning_for(x0).satisfied_by(out.trajectories)


def test_sampler_recovers_target_with_oracle():
    sched = make_schedule(10)
    x0 = x0_batch(4, 8, 6)
    out = ddpm_sample(OracleEpsNet(x0, sched), sched, tuple(x0.shape), conditioning_for(x0), torch_generator(2))
    assert torch.allclose(out.trajectories, x0, atol=1e-8)


def test_sampler_is_reproducible_per_item():
    sched = make_schedule(4)
    gens = lambda: [torch_generator(5, i) for i in range(3)]  # noqa: E731
    a = ddpm_sample(ConstantNet(0.1), sched, (3, 8, 6), None, gens()).trajectories
    b = ddpm_sample(ConstantNet(0.1), sched, (3, 8, 6), None, gens()).trajectories
    assert torch.equal(a, b)
    # item 1 does not depend on the batch it was sampled in
    solo = ddpm_sample(ConstantNet(0.1), sched, (1, 8, 6), None, [torch_generator(5, 1)]).trajectories
    assert torch.equal(solo[0], a[1])


def test_loss_is_zero_for_oracle():
    sched = make_schedule(10)
    x0 = x0_batch(4, 8, 6)
    loss, grad = loss_simple(OracleEpsNet(x0, sched), x0, conditioning_for(x0), torch_generator(0), sched)
    assert loss.item() == pytest.approx(0.0, abs=1e-18)
    assert grad is None


def test_loss_sums_free_entries():
    sched = make_schedule(4)
    x0 = x0_batch(2, 8, 6)
    noise = x0_batch(2, 8, 6, seed=9)
    t = torch.tensor([1, 4])
    full, _ = loss_simple(ZeroNet(), x0, None, torch_generator(0), sched, t=t, noise=noise)
    assert full.item() == pytest.approx(float((noise ** 2).sum() / 2))
    cond = conditioning_for(x0)
    masked, _ = loss_simple(ZeroNet(), x0, cond, torch_generator(0), sched, t=t, noise=noise)
    expected = float(((noise ** 2) * cond.free_mask(x0.shape)).sum() / 2)
    assert masked.item() == pytest.approx(expected)


def test_loss_gradient_for_real_network(small_net):
    sched = make_schedule(4)
    x0 = x0_batch(2, 16, 6)
    loss, grad = loss_simple(small_net, x0, conditioning_for(x0), torch_generator(0), sched)
    assert loss.item() > 0
    assert grad is not None and bool(torch.isfinite(grad).all())
