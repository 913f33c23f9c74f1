import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn

from .constants.constants import (
    ADAM_BETAS,
    ADAM_EPS,
    CLIP_NORM,
    LEARNING_RATE,
    PRIOR_NEGATIVE_SLOPE,
    STATE_DIM,
    TIME_EMBED_DIM,
    TRANSITION_DIM,
    UNET_DIMS,
    UNET_GROUPS,
    UNET_KERNEL,
)
from .errors import CheckpointError, ShapeMismatchError
from .preprocessors.storage import load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

Timestep = Union[int, torch.Tensor]


class SinusoidalEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(torch.arange(half, dtype=torch.float64) * -(math.log(10000) / (half - 1)))
        emb = t.to(torch.float64)[:, None] * freqs[None, :]
        return torch.cat([emb.sin(), emb.cos()], dim=-1)


class Conv1dBlock(nn.Module):
    """Conv1d -> GroupNorm -> Mish"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, groups: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv1d(in_channels, out_channels, kernel_size, padding=kernel_size // 2),
            nn.GroupNorm(groups, out_channels),
            nn.Mish(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.block(x)


class ResidualTemporalBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, time_dim: int, kernel_size: int, groups: int):
        super().__init__()
        self.conv1 = Conv1dBlock(in_channels, out_channels, kernel_size, groups)
        self.conv2 = Conv1dBlock(out_channels, out_channels, kernel_size, groups)
        self.time_mlp = nn.Sequential(nn.Mish(), nn.Linear(time_dim, out_channels))
        self.skip = nn.Conv1d(in_channels, out_channels, 1) if in_channels != out_channels else nn.Identity()

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(x) + self.time_mlp(t_emb)[:, :, None]
        return self.conv2(h) + self.skip(x)


class DenoiserNetwork(nn.Module):
    """
    Temporal U-Net over the horizon axis. Input and output are (batch, horizon, transition_dim);
    two stride-2 levels, so the horizon must be divisible by 4.
    """

    def __init__(self, horizon: int, transition_dim: int = TRANSITION_DIM, dims: Sequence[int] = UNET_DIMS,
                 kernel_size: int = UNET_KERNEL, groups: int = UNET_GROUPS, embed_dim: int = TIME_EMBED_DIM):
        super().__init__()
        if horizon % 4:
            raise ShapeMismatchError(f"horizon must be divisible by 4, got {horizon}")
        self.horizon = horizon
        self.transition_dim = transition_dim
        self.dims = tuple(dims)
        self.kernel_size = kernel_size
        self.groups = groups
        self.embed_dim = embed_dim

        time_dim = 4 * embed_dim
        self.time_embed = nn.Sequential(
            SinusoidalEmbedding(embed_dim),
            nn.Linear(embed_dim, time_dim),
            nn.Mish(),
            nn.Linear(time_dim, time_dim),
        )
        self.init_conv = nn.Conv1d(transition_dim, dims[0], kernel_size, padding=kernel_size // 2)

        in_out = list(zip(dims[:-1], dims[1:]))
        self.downs = nn.ModuleList(
            nn.ModuleList([
                ResidualTemporalBlock(c_in, c_out, time_dim, kernel_size, groups),
                ResidualTemporalBlock(c_out, c_out, time_dim, kernel_size, groups),
                nn.Conv1d(c_out, c_out, 3, stride=2, padding=1),
            ])
            for c_in, c_out in in_out
        )
        self.mid1 = ResidualTemporalBlock(dims[-1], dims[-1], time_dim, kernel_size, groups)
        self.mid2 = ResidualTemporalBlock(dims[-1], dims[-1], time_dim, kernel_size, groups)
        self.ups = nn.ModuleList(
            nn.ModuleList([
                nn.ConvTranspose1d(c_out, c_out, 4, stride=2, padding=1),
                ResidualTemporalBlock(2 * c_out, c_in, time_dim, kernel_size, groups),
                ResidualTemporalBlock(c_in, c_in, time_dim, kernel_size, groups),
            ])
            for c_in, c_out in reversed(in_out)
        )
        self.final_conv = Conv1dBlock(dims[0], dims[0], kernel_size, groups)
        self.out = nn.Conv1d(dims[0], transition_dim, 1)

    def arch_config(self) -> Dict:
        return {
            "kind": "denoiser",
            "horizon": self.horizon,
            "transition_dim": self.transition_dim,
            "dims": list(self.dims),
            "kernel_size": self.kernel_size,
            "groups": self.groups,
            "embed_dim": self.embed_dim,
        }

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        t_emb = self.time_embed(t)
        h = self.init_conv(x.transpose(1, 2))
        skips = []
        for res1, res2, down in self.downs:
            h = res2(res1(h, t_emb), t_emb)
            skips.append(h)
            h = down(h)
        h = self.mid2(self.mid1(h, t_emb), t_emb)
        for up, res1, res2 in self.ups:
            h = torch.cat([up(h), skips.pop()], dim=1)
            h = res2(res1(h, t_emb), t_emb)
        return self.out(self.final_conv(h)).transpose(1, 2)


class PriorNetwork(nn.Module):
    """(start state, goal state) -> whole trajectory, two affine maps with a leaky rectifier"""

    def __init__(self, horizon: int, transition_dim: int = TRANSITION_DIM, state_dim: int = STATE_DIM):
        super().__init__()
        self.horizon = horizon
        self.transition_dim = transition_dim
        self.state_dim = state_dim
        width = horizon * transition_dim
        self.model = nn.Sequential(
            nn.Linear(2 * state_dim, width),
            nn.LeakyReLU(PRIOR_NEGATIVE_SLOPE),
            nn.Linear(width, width),
        )

    def arch_config(self) -> Dict:
        return {
            "kind": "prior",
            "horizon": self.horizon,
            "transition_dim": self.transition_dim,
            "state_dim": self.state_dim,
        }

    def forward(self, start_state: torch.Tensor, goal_state: torch.Tensor) -> torch.Tensor:
        out = self.model(torch.cat([start_state, goal_state], dim=-1))
        return out.reshape(-1, self.horizon, self.transition_dim)


def _seeded(build, seed: int) -> nn.Module:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return build().to(torch.float64)


def build_denoiser(horizon: int, transition_dim: int = TRANSITION_DIM, seed: int = 0, **arch) -> DenoiserNetwork:
    return _seeded(lambda: DenoiserNetwork(horizon, transition_dim, **arch), seed)


def build_prior_network(horizon: int, transition_dim: int = TRANSITION_DIM, state_dim: int = STATE_DIM,
                        seed: int = 0) -> PriorNetwork:
    return _seeded(lambda: PriorNetwork(horizon, transition_dim, state_dim), seed)


def architecture_hash(net: nn.Module) -> str:
    layout = {
        "config": net.arch_config(),
        "params": [[name, list(p.shape)] for name, p in net.named_parameters()],
    }
    return hashlib.sha256(json.dumps(layout, sort_keys=True).encode("utf-8")).hexdigest()


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


def flat_parameters(net: nn.Module) -> torch.Tensor:
    return nn.utils.parameters_to_vector(net.parameters()).detach().clone()


def load_flat_parameters(net: nn.Module, params: torch.Tensor) -> None:
    if params.numel() != parameter_count(net):
        raise ShapeMismatchError(f"expected {parameter_count(net)} parameters, got {params.numel()}")
    with torch.no_grad():
        nn.utils.vector_to_parameters(params.to(torch.float64), net.parameters())


def parameter_views(net: nn.Module, flat: torch.Tensor) -> Dict[str, torch.Tensor]:
    """Named views into a flat vector laid out like `net.parameters()`"""
    views, offset = {}, 0
    for name, p in net.named_parameters():
        views[name] = flat[offset:offset + p.numel()].view_as(p)
        offset += p.numel()
    return views


def _timesteps(t: Timestep, batch: int, n_steps: int) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=torch.int64)
    if t.ndim == 0:
        t = t.expand(batch)
    if t.shape != (batch,):
        raise ShapeMismatchError(f"timestep shape {tuple(t.shape)} does not match batch {batch}")
    if bool((t < 0).any()) or bool((t >= n_steps).any()):
        raise ValueError(f"timestep index out of range [0, {n_steps})")
    return t


def _check_input(net: nn.Module, x: torch.Tensor) -> None:
    if x.ndim != 3 or x.shape[-1] != net.transition_dim:
        raise ShapeMismatchError(f"expected (batch, horizon, {net.transition_dim}), got {tuple(x.shape)}")
    if x.shape[1] % 4:
        raise ShapeMismatchError(f"horizon must be divisible by 4, got {x.shape[1]}")


def forward(net: DenoiserNetwork, x: torch.Tensor, t: Timestep, n_steps: int) -> torch.Tensor:
    """
    Denoiser prediction at 0-based step index t
    Args:
        net: denoiser
        x: (batch, horizon, transition_dim) input in normalized scale
        t: scalar or per-item step index in [0, n_steps)
        n_steps: schedule length
    Returns:
        Tensor shaped like x
    """
    _check_input(net, x)
    return net(x.to(torch.float64), _timesteps(t, x.shape[0], n_steps))


def backward(net: DenoiserNetwork, x: torch.Tensor, t: Timestep, n_steps: int,
             upstream: torch.Tensor) -> torch.Tensor:
    """Gradient of <forward(x, t), upstream> with respect to the flat parameter vector"""
    _check_input(net, x)
    if upstream.shape != x.shape:
        raise ShapeMismatchError(f"upstream shape {tuple(upstream.shape)} does not match {tuple(x.shape)}")
    params = list(net.parameters())
    with torch.enable_grad():
        out = net(x.to(torch.float64), _timesteps(t, x.shape[0], n_steps))
        grads = torch.autograd.grad(out, params, grad_outputs=upstream.to(out.dtype), allow_unused=True)
    return torch.cat([
        (g if g is not None else torch.zeros_like(p)).reshape(-1) for g, p in zip(grads, params)
    ])


def prior_forward(pnet: PriorNetwork, start_state: torch.Tensor, goal_state: torch.Tensor) -> torch.Tensor:
    """(batch, horizon, transition_dim) prediction from normalized endpoint states"""
    start_state = torch.as_tensor(start_state, dtype=torch.float64)
    goal_state = torch.as_tensor(goal_state, dtype=torch.float64)
    if start_state.ndim == 1:
        start_state, goal_state = start_state[None], goal_state[None]
    return pnet(start_state, goal_state)


def loss_gradient(net: nn.Module, loss: torch.Tensor) -> Optional[torch.Tensor]:
    """Flat gradient of a scalar loss, or None for a network without parameters"""
    params = [p for p in net.parameters()] if isinstance(net, nn.Module) else []
    if not params:
        return None
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return torch.cat([
        (g if g is not None else torch.zeros_like(p)).reshape(-1) for g, p in zip(grads, params)
    ]).detach()


class CallCounter(nn.Module):
    """Counts forward evaluations of the wrapped denoiser"""

    def __init__(self, net: nn.Module):
        super().__init__()
        self.net = net
        self.calls = 0

    @property
    def transition_dim(self) -> int:
        return self.net.transition_dim

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        self.calls += 1
        return self.net(x, t)


@dataclass
class TrainerState:
    optimizer: torch.optim.Adam
    clip_norm: float = CLIP_NORM
    seed: int = 0
    step: int = 0
    skipped: int = 0


def make_trainer(net: nn.Module, seed: int = 0, learning_rate: float = LEARNING_RATE,
                 betas: Tuple[float, float] = ADAM_BETAS, eps: float = ADAM_EPS,
                 clip_norm: float = CLIP_NORM) -> TrainerState:
    optimizer = torch.optim.Adam(net.parameters(), lr=learning_rate, betas=tuple(betas), eps=eps)
    return TrainerState(optimizer=optimizer, clip_norm=clip_norm, seed=seed)


def train_step(net: nn.Module, state: TrainerState, grad: torch.Tensor) -> bool:
    """
    One Adam update from a flat gradient, clipped to the global norm
    Returns:
        False when the gradient was non-finite and the update was skipped
    """
    if not bool(torch.isfinite(grad).all()):
        state.skipped += 1
        logger.warning(f"Skipping update at step {state.step}: non-finite gradient")
        return False
    offset = 0
    for p in net.parameters():
        n = p.numel()
        p.grad = grad[offset:offset + n].view_as(p).clone().to(p.dtype)
        offset += n
    nn.utils.clip_grad_norm_(net.parameters(), state.clip_norm)
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    state.step += 1
    return True


def save_network(path: Path, net: nn.Module, metadata: Dict) -> Path:
    header = {
        **metadata,
        "arch": net.arch_config(),
        "arch_hash": architecture_hash(net),
    }
    return save_checkpoint(path, flat_parameters(net), header)


def load_network(path: Path, expected_kind: Optional[str] = None) -> Tuple[nn.Module, Dict]:
    """
    Rebuild a denoiser or prior network from its checkpoint
    Raises:
        CheckpointError: missing file, wrong network kind or architecture hash mismatch
    """
    params, meta = load_checkpoint(path)
    arch = dict(meta.get("arch") or {})
    kind = arch.pop("kind", None)
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"{path} holds a {kind!r} network, expected {expected_kind!r}")
    if kind == "denoiser":
        net = DenoiserNetwork(
            arch["horizon"], arch["transition_dim"], dims=arch["dims"], kernel_size=arch["kernel_size"],
            groups=arch["groups"], embed_dim=arch["embed_dim"],
        ).to(torch.float64)
    elif kind == "prior":
        net = PriorNetwork(arch["horizon"], arch["transition_dim"], arch["state_dim"]).to(torch.float64)
    else:
        raise CheckpointError(f"{path} has no recognised architecture header")
    if architecture_hash(net) != meta.get("arch_hash"):
        raise CheckpointError(f"architecture hash mismatch for {path}")
    load_flat_parameters(net, params)
    net.eval()
    logger.info(f"Loaded {kind} network from {path}")
    return net, meta
