import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import torch
import torch.nn as nn

from .errors import ScheduleError
from .networks import CallCounter, loss_gradient
from .seeding import TorchRNG, standard_normal, uniform_indices
from .trajectory import Conditioning

logger = logging.getLogger(__name__)

BETA_CEILING = 0.999
COSINE_OFFSET = 0.008


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step quantities indexed by t - 1 for t in 1..N"""

    n_steps: int
    kind: str
    beta: torch.Tensor
    alpha: torch.Tensor
    alpha_bar: torch.Tensor

    @property
    def alpha_bar_prev(self) -> torch.Tensor:
        return torch.cat([torch.ones(1, dtype=torch.float64), self.alpha_bar[:-1]])

    @property
    def posterior_variance(self) -> torch.Tensor:
        """beta_tilde_t = beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)"""
        return self.beta * (1.0 - self.alpha_bar_prev) / (1.0 - self.alpha_bar)


@dataclass(frozen=True)
class SampleOutput:
    trajectories: torch.Tensor
    nfe: int


def _from_betas(n_steps: int, kind: str, beta: torch.Tensor) -> NoiseSchedule:
    if bool((beta <= 0).any()) or bool((beta >= 1).any()):
        raise ScheduleError("beta must lie in (0, 1)")
    alpha = 1.0 - beta
    return NoiseSchedule(n_steps, kind, beta, alpha, torch.cumprod(alpha, dim=0))


def make_schedule(n_steps: int, kind: Literal["linear", "cosine"] = "linear",
                  beta_min: Optional[float] = None, beta_max: Optional[float] = None) -> NoiseSchedule:
    """
    Fixed variance schedule with N steps
    Args:
        n_steps: N >= 1
        kind: linear beta ramp or squared-cosine alpha_bar profile
        beta_min: linear start, default 1e-4 * 1000 / N
        beta_max: linear end, default 0.02 * 1000 / N held below 1
    Returns:
        NoiseSchedule
    """
    if n_steps < 1:
        raise ScheduleError(f"schedule needs N >= 1, got {n_steps}")
    scale = 1000.0 / n_steps
    if kind == "linear":
        lo = 1e-4 * scale if beta_min is None else beta_min
        hi = min(0.02 * scale, BETA_CEILING) if beta_max is None else beta_max
        lo = min(lo, hi)
        for name, value in (("beta_min", lo), ("beta_max", hi)):
            if not 0.0 < value < 1.0:
                raise ScheduleError(f"{name}={value} outside (0, 1)")
        if n_steps == 1:
            beta = torch.tensor([hi], dtype=torch.float64)
        else:
            beta = torch.linspace(lo, hi, n_steps, dtype=torch.float64)
    elif kind == "cosine":
        steps = torch.arange(n_steps + 1, dtype=torch.float64) / n_steps
        f = torch.cos((steps + COSINE_OFFSET) / (1 + COSINE_OFFSET) * math.pi / 2) ** 2
        alpha_bar = f / f[0]
        beta = torch.clamp(1.0 - alpha_bar[1:] / alpha_bar[:-1], max=BETA_CEILING)
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    return _from_betas(n_steps, kind, beta)


def _as_steps(t, batch: int, n_steps: int, low: int = 1) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=torch.int64)
    if t.ndim == 0:
        t = t.expand(batch)
    if bool((t < low).any()) or bool((t > n_steps).any()):
        raise ScheduleError(f"timestep outside [{low}, {n_steps}]")
    return t


def _gather(values: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    return values[t - 1].reshape(-1, 1, 1)


def q_sample(x0: torch.Tensor, t, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps"""
    t = _as_steps(t, x0.shape[0], sched.n_steps)
    a_bar = _gather(sched.alpha_bar, t)
    return a_bar.sqrt() * x0 + (1.0 - a_bar).sqrt() * eps


def loss_simple(net: nn.Module, x0: torch.Tensor, conditioning: Optional[Conditioning], rng: TorchRNG,
                sched: NoiseSchedule, t: Optional[torch.Tensor] = None,
                noise: Optional[torch.Tensor] = None) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """
    Noise-prediction loss summed over free entries and averaged over the batch
    Args:
        net: denoiser called as net(x_t, t - 1)
        x0: (batch, horizon, dim) normalized targets
        conditioning: entries fixed during sampling; excluded from the loss
        rng: generator(s) for timesteps and noise
        sched: NoiseSchedule
        t, noise: fixed draws, mainly for tests
    Returns:
        (detached loss, flat parameter gradient or None for a parameterless net)
    """
    batch = x0.shape[0]
    t = uniform_indices(sched.n_steps, batch, rng) if t is None else _as_steps(t, batch, sched.n_steps)
    noise = standard_normal(tuple(x0.shape), rng) if noise is None else noise
    x_t = q_sample(x0, t, noise, sched)
    mask = torch.ones_like(x0)
    if conditioning is not None:
        x_t = conditioning.apply(x_t)
        mask = conditioning.free_mask(x0.shape)
    with torch.enable_grad():
        pred = net(x_t, t - 1)
        loss = (((pred - noise) ** 2) * mask).sum() / batch
        grad = loss_gradient(net, loss)
    return loss.detach(), grad


@torch.no_grad()
def p_sample_step(net: nn.Module, x_t: torch.Tensor, t: int, sched: NoiseSchedule, rng: TorchRNG,
                  noise: Optional[torch.Tensor] = None) -> torch.Tensor:
    """One ancestral step x_t -> x_{t-1}; noise-free at t = 1"""
    if not 1 <= t <= sched.n_steps:
        raise ScheduleError(f"reverse step needs t in [1, {sched.n_steps}], got {t}")
    batch = x_t.shape[0]
    eps_hat = net(x_t, torch.full((batch,), t - 1, dtype=torch.int64))
    beta, alpha, a_bar = sched.beta[t - 1], sched.alpha[t - 1], sched.alpha_bar[t - 1]
    mean = (x_t - (beta / (1.0 - a_bar).sqrt()) * eps_hat) / alpha.sqrt()
    if t == 1:
        return mean
    z = standard_normal(tuple(x_t.shape), rng) if noise is None else noise
    return mean + sched.posterior_variance[t - 1].sqrt() * z


@torch.no_grad()
def ddpm_sample(net: nn.Module, sched: NoiseSchedule, shape: Tuple[int, ...],
                conditioning: Optional[Conditioning], rng: TorchRNG) -> SampleOutput:
    """
    Reverse chain from N(0, I), conditioning written back after every step
    Returns:
        SampleOutput with exactly N network evaluations
    """
    counter = CallCounter(net)
    x = standard_normal(tuple(shape), rng)
    if conditioning is not None:
        x = conditioning.apply(x)
    for t in range(sched.n_steps, 0, -1):
        x = p_sample_step(counter, x, t, sched, rng)
        if conditioning is not None:
            x = conditioning.apply(x)
            assert conditioning.satisfied_by(x), f"conditioning lost at step {t}"
    return SampleOutput(x, counter.calls)
