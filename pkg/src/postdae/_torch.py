"""Small torch helpers shared by the DAE and the UNet."""
from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
import torch
from torch import nn


@contextmanager
def seeded(seed: int):
    """Run a block under a fixed torch seed without disturbing the global stream."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        yield


def init_fan_in_(module: nn.Module) -> None:
    """Truncated-normal (+-2 sd) fan-in scaled weights, zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            w = m.weight
            if isinstance(m, nn.ConvTranspose2d):
                fan_in = w.shape[0] * w[0, 0].numel()
            else:
                fan_in = w[0].numel()
            std = math.sqrt(2.0 / fan_in)
            nn.init.trunc_normal_(w, mean=0.0, std=std, a=-2 * std, b=2 * std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def state_to_numpy(module: nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().astype(np.float32).copy()
            for k, v in module.state_dict().items()}


def load_numpy_state(module: nn.Module, weights: dict[str, np.ndarray]) -> None:
    ref = module.state_dict()
    state = {k: torch.as_tensor(np.asarray(weights[k]), dtype=ref[k].dtype) for k in ref}
    module.load_state_dict(state)


def expected_shapes(module: nn.Module) -> dict[str, tuple[int, ...]]:
    return {k: tuple(v.shape) for k, v in module.state_dict().items()}


def to_batch(arrays, dtype=torch.float32) -> torch.Tensor:
    """Stack 2-D arrays into an (N, 1, H, W) tensor."""
    return torch.as_tensor(np.stack([np.asarray(a, dtype=np.float32) for a in arrays]),
                           dtype=dtype).unsqueeze(1)


def batch_soft_dice_loss(pred: torch.Tensor, target: torch.Tensor,
                         epsilon: float = 1.0) -> torch.Tensor:
    """Mean over the batch of per-sample soft Dice losses."""
    dims = tuple(range(1, pred.dim()))
    inter = (pred * target).sum(dims)
    den = pred.sum(dims) + target.sum(dims)
    return (1.0 - (2.0 * inter + epsilon) / (den + epsilon)).mean()
