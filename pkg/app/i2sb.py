import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from .constants.constants import BRIDGE_TOTAL_VARIANCE
from .ddpm import SampleOutput
from .errors import NFEError, ScheduleError
from .networks import CallCounter, loss_gradient
from .seeding import TorchRNG, standard_normal, uniform_indices
from .trajectory import Conditioning

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BridgeSchedule:
    """Variances accumulated from either side, at grid points t = 0..N"""

    n_steps: int
    beta: torch.Tensor
    sigma2: torch.Tensor
    sigma2_bar: torch.Tensor

    @property
    def sigma(self) -> torch.Tensor:
        return self.sigma2.sqrt()


def make_bridge_schedule(n_steps: int, total_variance: float = BRIDGE_TOTAL_VARIANCE) -> BridgeSchedule:
    """Symmetric triangular beta peaking mid-trajectory, scaled so sigma2[N] = total_variance"""
    if n_steps < 1:
        raise ScheduleError(f"bridge schedule needs N >= 1, got {n_steps}")
    k = torch.arange(1, n_steps + 1, dtype=torch.float64)
    profile = torch.minimum(k, n_steps + 1 - k)
    beta = total_variance * profile / profile.sum()
    sigma2 = torch.cat([torch.zeros(1, dtype=torch.float64), torch.cumsum(beta, dim=0)])
    sigma2_bar = sigma2[-1] - sigma2
    return BridgeSchedule(n_steps, beta, sigma2, sigma2_bar)


def gaussian_product_coef(s1sq: torch.Tensor, s2sq: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Weights and variance of the product of N(x0, s1sq) and N(x1, s2sq)
    Returns:
        (weight on x0, weight on x1, variance)
    """
    denom = s1sq + s2sq
    return s2sq / denom, s1sq / denom, s1sq * s2sq / denom


def _grid_index(t, batch: int, n_steps: int, low: int = 0) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=torch.int64)
    if t.ndim == 0:
        t = t.expand(batch)
    if bool((t < low).any()) or bool((t > n_steps).any()):
        raise ScheduleError(f"grid time outside [{low}, {n_steps}]")
    return t


def bridge_posterior(x0: torch.Tensor, x1: torch.Tensor, t, sched: BridgeSchedule) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Mean and scalar variance of q(x_t | x0, x1)
    Returns:
        (mu shaped like x0, variance shaped (batch, 1, 1))
    """
    if x0.shape != x1.shape:
        raise ValueError(f"endpoint shapes differ: {tuple(x0.shape)} vs {tuple(x1.shape)}")
    t = _grid_index(t, x0.shape[0], sched.n_steps)
    s2, s2_bar = sched.sigma2[t], sched.sigma2_bar[t]
    if bool(((s2 + s2_bar) == 0).any()):
        raise ScheduleError("both accumulated variances are zero")
    w0, w1, var = gaussian_product_coef(s2, s2_bar)
    w0, w1, var = (v.reshape(-1, 1, 1) for v in (w0, w1, var))
    return w0 * x0 + w1 * x1, var


def bridge_sample_training(x0: torch.Tensor, x1: torch.Tensor, t, rng: TorchRNG, sched: BridgeSchedule,
                           noise: Optional[torch.Tensor] = None) -> torch.Tensor:
    mu, var = bridge_posterior(x0, x1, t, sched)
    z = standard_normal(tuple(x0.shape), rng) if noise is None else noise
    return mu + var.sqrt() * z


def bridge_loss(net: nn.Module, x0: torch.Tensor, x1: torch.Tensor, conditioning: Optional[Conditioning],
                rng: TorchRNG, sched: BridgeSchedule, t: Optional[torch.Tensor] = None,
                noise: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """
    Regress net(x_t, t - 1) onto (x_t - x0) / sigma_t with t uniform in [1, N]
    Args:
        net: denoiser
        x0: (batch, horizon, dim) normalized targets
        x1: prior samples paired with x0
        conditioning: fixed entries, excluded from the loss
        rng: generator(s) for timesteps and noise
        sched: BridgeSchedule
        t, noise: fixed draws, mainly for tests
    Returns:
        (detached loss, flat parameter gradient or None)
    """
    batch = x0.shape[0]
    t = uniform_indices(sched.n_steps, batch, rng) if t is None else _grid_index(t, batch, sched.n_steps, low=1)
    x_t = bridge_sample_training(x0, x1, t, rng, sched, noise=noise)
    mask = torch.ones_like(x0)
    if conditioning is not None:
        x_t = conditioning.apply(x_t)
        mask = conditioning.free_mask(x0.shape)
    target = (x_t - x0) / sched.sigma[t].reshape(-1, 1, 1)
    with torch.enable_grad():
        pred = net(x_t, t - 1)
        loss = (((pred - target) ** 2) * mask).sum() / batch
        grad = loss_gradient(net, loss)
    return loss.detach(), grad


def sampling_grid(n_steps: int, nfe: int, stop_at: int = 0) -> list:
    """nfe + 1 grid times from N down to stop_at, rounded to the nearest integer"""
    return [int(v) for v in np.floor(np.linspace(n_steps, stop_at, nfe + 1) + 0.5)]


@torch.no_grad()
def bridge_sample(net: nn.Module, sched: BridgeSchedule, x1: torch.Tensor, nfe: int,
                  conditioning: Optional[Conditioning], rng: TorchRNG, stochastic: bool = True,
                  stop_at: int = 0) -> SampleOutput:
    """
    Multi-step bridge sampler with one network call per jump
    Args:
        net: denoiser
        sched: BridgeSchedule
        x1: prior samples (batch, horizon, dim)
        nfe: number of jumps, 1 <= nfe <= N - stop_at
        conditioning: written back after every jump
        rng: generator(s) for posterior noise
        stochastic: sample each jump's posterior instead of taking its mean
        stop_at: grid time the chain ends at; 0 returns the x0 estimate
    Returns:
        SampleOutput with exactly nfe network evaluations
    """
    if nfe < 1 or nfe > sched.n_steps - stop_at:
        raise NFEError(f"nfe must lie in [1, {sched.n_steps - stop_at}], got {nfe}")
    counter = CallCounter(net)
    batch = x1.shape[0]
    x = x1.to(torch.float64)
    if conditioning is not None:
        x = conditioning.apply(x)
    grid = sampling_grid(sched.n_steps, nfe, stop_at)
    for s, t in zip(grid[:-1], grid[1:]):
        step_idx = torch.full((batch,), s - 1, dtype=torch.int64)
        x0_hat = x - sched.sigma[s] * counter(x, step_idx)
        # x_s takes the role of the upper endpoint; variance re-accumulated on [0, t] and [t, s]
        w0, ws, var = gaussian_product_coef(sched.sigma2[t], sched.sigma2[s] - sched.sigma2[t])
        x = w0 * x0_hat + ws * x
        if stochastic and t > 0:
            x = x + var.sqrt() * standard_normal(tuple(x.shape), rng)
        if conditioning is not None:
            x = conditioning.apply(x)
            assert conditioning.satisfied_by(x), f"conditioning lost at jump {s}->{t}"
    return SampleOutput(x, counter.calls)
