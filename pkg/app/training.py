import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
import torch
from sklearn.model_selection import train_test_split
from tqdm import tqdm

from .dataset_gen import conditioning_for, sample_batch
from .ddpm import NoiseSchedule, loss_simple
from .i2sb import BridgeSchedule, bridge_loss
from .networks import DenoiserNetwork, PriorNetwork, TrainerState, loss_gradient, make_trainer, prior_forward, train_step
from .priors import PriorKind, build_prior_batch
from .seeding import numpy_rng, torch_generator
from .trajectory import Dataset

logger = logging.getLogger(__name__)

Schedule = Union[NoiseSchedule, BridgeSchedule]


@dataclass
class TrainingLog:
    losses: List[float] = field(default_factory=list)
    skipped: int = 0

    @property
    def initial_loss(self) -> Optional[float]:
        return self.losses[0] if self.losses else None

    @property
    def final_loss(self) -> Optional[float]:
        return self.losses[-1] if self.losses else None


def denoiser_batch_loss(engine: str, net: DenoiserNetwork, sched: Schedule, ds: Dataset, batch_size: int,
                        batch_rng: np.random.Generator, noise_rng: torch.Generator,
                        prior: Optional[PriorKind] = None,
                        prior_net: Optional[PriorNetwork] = None) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    """Loss and gradient of one freshly drawn batch for either engine"""
    x0, cond = sample_batch(ds, batch_size, batch_rng)
    if engine == "ddpm":
        return loss_simple(net, x0, cond, noise_rng, sched)
    x1 = build_prior_batch(prior or PriorKind("gaussian"), cond, ds.stats, ds.horizon, noise_rng, prior_net)
    return bridge_loss(net, x0, x1, cond, noise_rng, sched)


def train_denoiser(engine: str, net: DenoiserNetwork, sched: Schedule, ds: Dataset, steps: int,
                   batch_size: int, trainer: TrainerState, prior: Optional[PriorKind] = None,
                   prior_net: Optional[PriorNetwork] = None, progress: bool = False) -> TrainingLog:
    """
    Run `steps` optimizer updates of the denoiser on batches from `ds`
    Returns:
        TrainingLog with one loss per step
    """
    batch_rng = numpy_rng(trainer.seed, 1)
    noise_rng = torch_generator(trainer.seed, 2)
    log = TrainingLog()
    net.train()
    for _ in tqdm(range(steps), desc=f"train {engine}", disable=not progress):
        loss, grad = denoiser_batch_loss(engine, net, sched, ds, batch_size, batch_rng, noise_rng, prior, prior_net)
        if not train_step(net, trainer, grad):
            log.skipped += 1
        log.losses.append(float(loss))
    net.eval()
    if log.losses:
        logger.info(f"{engine} training: loss {log.initial_loss:.4f} -> {log.final_loss:.4f} over {steps} steps")
    return log


def prior_loss(pnet: PriorNetwork, x0: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Squared error of the predicted trajectory, summed per item and averaged over the batch"""
    cond = conditioning_for(x0)
    with torch.enable_grad():
        pred = prior_forward(pnet, cond.start, cond.goal)
        loss = ((pred - x0) ** 2).sum() / x0.shape[0]
        grad = loss_gradient(pnet, loss)
    return loss.detach(), grad


def prior_mse(pnet: PriorNetwork, ds: Dataset) -> float:
    x0 = torch.from_numpy(np.array(ds.normalized_segments))
    cond = conditioning_for(x0)
    with torch.no_grad():
        return float(((prior_forward(pnet, cond.start, cond.goal) - x0) ** 2).mean())


def straight_line_mse(ds: Dataset) -> float:
    x0 = torch.from_numpy(np.array(ds.normalized_segments))
    cond = conditioning_for(x0)
    lines = build_prior_batch(PriorKind("straight_line"), cond, ds.stats, ds.horizon, torch_generator(0))
    return float(((lines - x0) ** 2).mean())


def split_holdout(ds: Dataset, test_size: float = 0.2, seed: int = 0) -> Tuple[Dataset, Dataset]:
    train_idx, holdout_idx = train_test_split(np.arange(len(ds)), test_size=test_size, random_state=seed)
    return ds.subset(np.sort(train_idx)), ds.subset(np.sort(holdout_idx))


def train_prior_network(pnet: PriorNetwork, ds: Dataset, steps: int, batch_size: int,
                        trainer: TrainerState, progress: bool = False) -> TrainingLog:
    """Fit the learned prior to whole normalized segments from their endpoint states"""
    batch_rng = numpy_rng(trainer.seed, 3)
    log = TrainingLog()
    pnet.train()
    for _ in tqdm(range(steps), desc="train prior", disable=not progress):
        x0, _ = sample_batch(ds, batch_size, batch_rng)
        loss, grad = prior_loss(pnet, x0)
        if not train_step(pnet, trainer, grad):
            log.skipped += 1
        log.losses.append(float(loss))
    pnet.eval()
    return log


def make_trainer_from_config(net: torch.nn.Module, config, seed: int) -> TrainerState:
    return make_trainer(
        net,
        seed=seed,
        learning_rate=config.learning_rate,
        betas=config.betas,
        eps=config.eps,
        clip_norm=config.clip_norm,
    )
