import numpy as np
import torch
import torch.nn as nn

from app.ddpm import NoiseSchedule
from app.i2sb import BridgeSchedule

SMALL_ARCH = {"dims": (8, 16, 32), "groups": 4, "embed_dim": 8}


class ZeroNet(nn.Module):
    def forward(self, x, t):
        return torch.zeros_like(x)


class ConstantNet(nn.Module):
    def __init__(self, value: float):
        super().__init__()
        self.value = value

    def forward(self, x, t):
        return torch.full_like(x, self.value)


class OracleEpsNet(nn.Module):
    """Returns the exact noise that maps x0 to x_t under the schedule"""

    def __init__(self, x0: torch.Tensor, sched: NoiseSchedule):
        super().__init__()
        self.x0 = x0
        self.sched = sched

    def forward(self, x, t):
        a_bar = self.sched.alpha_bar[t].reshape(-1, 1, 1)
        return (x - a_bar.sqrt() * self.x0) / (1.0 - a_bar).sqrt()


class OracleBridgeNet(nn.Module):
    """Predicts (x_t - x0) / sigma_t for a known x0"""

    def __init__(self, x0: torch.Tensor, sched: BridgeSchedule):
        super().__init__()
        self.x0 = x0
        self.sched = sched

    def forward(self, x, t):
        return (x - self.x0) / self.sched.sigma[t + 1].reshape(-1, 1, 1)


def x0_batch(batch: int = 3, horizon: int = 8, dim: int = 6, seed: int = 0) -> torch.Tensor:
    rng = np.random.default_rng(seed)
    return torch.from_numpy(rng.uniform(-1, 1, size=(batch, horizon, dim)))
