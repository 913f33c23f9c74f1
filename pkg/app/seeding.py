from typing import Sequence, Tuple, Union

import numpy as np
import torch

TorchRNG = Union[torch.Generator, Sequence[torch.Generator]]


def _stream_seed(seed: int, *stream: int) -> int:
    # SeedSequence mixes (seed, stream...) into one well-spread 63-bit value
    return int(np.random.SeedSequence([seed, *stream]).generate_state(2, dtype=np.uint64)[0] >> 1)


def numpy_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent numpy stream for (seed, stream...)"""
    return np.random.default_rng([seed, *stream])


def torch_generator(seed: int, *stream: int) -> torch.Generator:
    """Independent torch CPU generator for (seed, stream...)"""
    g = torch.Generator(device="cpu")
    g.manual_seed(_stream_seed(seed, *stream))
    return g


def standard_normal(shape: Tuple[int, ...], rng: TorchRNG, dtype=torch.float64) -> torch.Tensor:
    """
    Draw N(0, I) noise of the given shape
    Args:
        shape: full shape, leading dimension is the batch
        rng: one generator for the whole batch, or one generator per batch item
    Returns:
        Tensor of shape `shape`
    """
    if isinstance(rng, torch.Generator):
        return torch.randn(shape, generator=rng, dtype=dtype)
    if len(rng) != shape[0]:
        raise ValueError(f"got {len(rng)} generators for batch of {shape[0]}")
    return torch.stack([torch.randn(shape[1:], generator=g, dtype=dtype) for g in rng])


def uniform_indices(high: int, size: int, rng: TorchRNG) -> torch.Tensor:
    """Integers in [1, high] drawn per batch item"""
    if isinstance(rng, torch.Generator):
        return torch.randint(1, high + 1, (size,), generator=rng)
    return torch.stack([torch.randint(1, high + 1, (1,), generator=g)[0] for g in rng])
