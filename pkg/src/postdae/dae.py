"""Denoising autoencoder shape prior ("Post-DAE").

The network is trained on (corrupted, clean) mask pairs and, at inference,
projects any mask through its low-dimensional code so that the reconstruction
falls back onto the learned space of plausible shapes.

Topology (``input_size`` S, grid side ``g = S // 32``):

====================  =============================================
encoder stages 1-4    conv 3x3 stride 2 + conv 3x3 stride 1, ReLU
encoder stage 5       conv 3x3 stride 2, ReLU
code                  linear ``32 g^2 -> code_size``, no activation
expand                linear ``code_size -> 1024``, ReLU, reshape (1024/g^2) x g x g
decoder stages 1-5    2x nearest upsample + conv 3x3, then conv 3x3
output                last conv has 1 channel and a sigmoid
====================  =============================================
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from ._torch import (
    batch_soft_dice_loss,
    expected_shapes,
    init_fan_in_,
    load_numpy_state,
    seeded,
    state_to_numpy,
    to_batch,
)
from .checkpoint import ModelCheckpoint
from .degrade import DegradationConfig, degrade
from .errors import DimensionMismatch, EmptyDataset, InvalidConfig, InvalidSpec
from .masks import as_mask

log = logging.getLogger(__name__)

KIND = "dae"


@dataclass(frozen=True)
class DAEArchitectureSpec:
    input_size: int = 1024
    encoder_channels: tuple[int, ...] = (16, 32, 32, 32, 32)
    code_size: int = 512
    decoder_channels: int = 16
    expand_size: int = 1024

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(self.encoder_channels))
        if len(self.encoder_channels) != 5:
            raise InvalidSpec("the encoder has exactly 5 stages")
        if self.input_size < 32 or self.input_size % 32:
            raise InvalidSpec(f"input_size must be a positive multiple of 32, got {self.input_size}")
        if min(self.code_size, self.decoder_channels, self.expand_size) < 1:
            raise InvalidSpec("code_size, decoder_channels and expand_size must be >= 1")
        if self.expand_size % (self.grid * self.grid):
            raise InvalidSpec(
                f"expand_size {self.expand_size} is not a multiple of the {self.grid}x{self.grid} grid"
            )

    @property
    def grid(self) -> int:
        return self.input_size // 32

    @property
    def seed_channels(self) -> int:
        """Channels of the decoder's first feature map (1 at the 1024 default)."""
        return self.expand_size // (self.grid * self.grid)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_channels"] = list(self.encoder_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DAEArchitectureSpec":
        return cls(**d)


@dataclass
class DAETrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 15
    epochs: int = 150
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    seed: int = 0
    epsilon: float = 1.0

    def __post_init__(self):
        if isinstance(self.degradation, dict):
            self.degradation = DegradationConfig.from_dict(self.degradation)
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidConfig("batch_size and epochs must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["degradation"] = self.degradation.to_dict()
        return d


class DAENet(nn.Module):
    def __init__(self, spec: DAEArchitectureSpec):
        super().__init__()
        self.spec = spec
        layers: list[nn.Module] = []
        c_in = 1
        for i, c in enumerate(spec.encoder_channels):
            layers += [nn.Conv2d(c_in, c, 3, stride=2, padding=1), nn.ReLU()]
            if i < 4:
                layers += [nn.Conv2d(c, c, 3, padding=1), nn.ReLU()]
            c_in = c
        self.encoder = nn.Sequential(*layers)
        g = spec.grid
        self.code = nn.Linear(c_in * g * g, spec.code_size)
        self.expand = nn.Linear(spec.code_size, spec.seed_channels * g * g)
        layers = []
        c_in, c = spec.seed_channels, spec.decoder_channels
        for i in range(5):
            last = i == 4
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(c_in, c, 3, padding=1),
                nn.ReLU(),
                nn.Conv2d(c, 1 if last else c, 3, padding=1),
                nn.Sigmoid() if last else nn.ReLU(),
            ]
            c_in = c
        self.decoder = nn.Sequential(*layers)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.code(self.encoder(x).flatten(1))

    def decode(self, h: torch.Tensor) -> torch.Tensor:
        g = self.spec.grid
        z = torch.relu(self.expand(h)).view(-1, self.spec.seed_channels, g, g)
        return self.decoder(z)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode(x))


def build_dae(spec: DAEArchitectureSpec | None = None, seed: int = 0) -> ModelCheckpoint:
    """Freshly initialised DAE as an epoch-0 checkpoint."""
    spec = spec or DAEArchitectureSpec()
    with seeded(seed):
        net = DAENet(spec)
        init_fan_in_(net)
    return to_checkpoint(net, epoch=0)


def to_checkpoint(net: DAENet, epoch: int, loss_history=(), extra=None) -> ModelCheckpoint:
    return ModelCheckpoint(KIND, net.spec.to_dict(), state_to_numpy(net), epoch,
                           list(loss_history), dict(extra or {}))


def load_dae(ckpt: ModelCheckpoint, dtype=torch.float32) -> DAENet:
    """Rebuild the network from a checkpoint (in eval mode)."""
    if ckpt.kind != KIND:
        raise InvalidSpec(f"expected a {KIND} checkpoint, got {ckpt.kind!r}")
    net = DAENet(DAEArchitectureSpec.from_dict(ckpt.architecture))
    ckpt.check_shapes(expected_shapes(net))
    load_numpy_state(net, ckpt.weights)
    return net.to(dtype).eval()


def _net(model) -> DAENet:
    return model if isinstance(model, DAENet) else load_dae(model)


def _check_size(net: DAENet, mask: np.ndarray):
    s = net.spec.input_size
    if mask.shape != (s, s):
        raise DimensionMismatch(f"mask is {mask.shape}, model expects {(s, s)}")


def encode(model, mask) -> np.ndarray:
    """Latent code of ``mask`` (length ``code_size``)."""
    net = _net(model)
    mask = as_mask(mask)
    _check_size(net, mask)
    dtype = next(net.parameters()).dtype
    with torch.no_grad():
        return net.encode(to_batch([mask], dtype))[0].numpy().astype(np.float64)


def decode(model, code) -> np.ndarray:
    """Probability map reconstructed from a latent code."""
    net = _net(model)
    code = np.asarray(code, dtype=float)
    if code.shape != (net.spec.code_size,):
        raise DimensionMismatch(f"code has shape {code.shape}, expected ({net.spec.code_size},)")
    dtype = next(net.parameters()).dtype
    with torch.no_grad():
        out = net.decode(torch.as_tensor(code, dtype=dtype)[None])
    return out[0, 0].numpy().astype(np.float64)


def binarize(prob, threshold: float = 0.5) -> np.ndarray:
    """``prob >= threshold`` is foreground."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return np.asarray(prob) >= threshold


def reconstruct(model, masks: Sequence[np.ndarray], batch_size: int = 16) -> list[np.ndarray]:
    """Probability maps ``decode(encode(m))`` for a batch of masks."""
    net = _net(model)
    masks = [as_mask(m) for m in masks]
    for m in masks:
        _check_size(net, m)
    dtype = next(net.parameters()).dtype
    out = []
    with torch.no_grad():
        for i in range(0, len(masks), batch_size):
            probs = net(to_batch(masks[i : i + batch_size], dtype))
            out.extend(p[0].numpy().astype(np.float64) for p in probs)
    return out


def postprocess(model, mask, threshold: float = 0.5) -> np.ndarray:
    """Project ``mask`` onto the learned shape space and binarize the result."""
    return binarize(reconstruct(model, [mask])[0], threshold)


def postprocess_batch(model, masks, threshold: float = 0.5) -> list[np.ndarray]:
    return [binarize(p, threshold) for p in reconstruct(model, masks)]


def corruption_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Independent generator per (run seed, epoch, sample)."""
    return np.random.default_rng([seed, epoch, index])


def train_dae(
    masks: Sequence[np.ndarray],
    cfg: DAETrainConfig | None = None,
    spec: DAEArchitectureSpec | None = None,
    init: ModelCheckpoint | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
) -> ModelCheckpoint:
    """Train on clean masks only; each sample is re-corrupted every epoch.

    The loss is the batch mean of ``1 - softDice(net(degrade(S)), S)``.
    ``loss_history`` holds per-epoch means; per-step losses are kept in
    ``extra["step_loss"]``.
    """
    cfg = cfg or DAETrainConfig()
    if len(masks) == 0:
        raise EmptyDataset("no masks to train on")
    masks = [as_mask(m) for m in masks]
    if spec is None:
        spec = (DAEArchitectureSpec.from_dict(init.architecture) if init
                else DAEArchitectureSpec(input_size=masks[0].shape[0]))
    for m in masks:
        if m.shape != (spec.input_size, spec.input_size):
            raise DimensionMismatch(f"mask {m.shape} does not match input_size {spec.input_size}")

    ckpt = init or build_dae(spec, cfg.seed)
    net = load_dae(ckpt).train()
    with seeded(cfg.seed):
        opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    clean = to_batch(masks)
    order_rng = np.random.default_rng([cfg.seed, 0xDAE])
    epoch_loss = list(ckpt.loss_history)
    step_loss = list(ckpt.extra.get("step_loss", []))
    start = time.perf_counter()

    for epoch in range(ckpt.epoch + 1, ckpt.epoch + cfg.epochs + 1):
        order = order_rng.permutation(len(masks))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            noisy = to_batch([
                degrade(masks[j], cfg.degradation, corruption_rng(cfg.seed, epoch, int(j)))
                for j in idx
            ])
            loss = batch_soft_dice_loss(net(noisy), clean[idx], cfg.epsilon)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        step_loss.extend(losses)
        epoch_loss.append(float(np.mean(losses)))
        log.debug("dae epoch %d loss %.4f", epoch, epoch_loss[-1])
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss[-1])

    log.info("dae trained %d epochs in %.1fs", cfg.epochs, time.perf_counter() - start)
    extra = dict(ckpt.extra)
    extra.update(step_loss=step_loss, train_config=cfg.to_dict())
    return to_checkpoint(net.eval(), epoch, epoch_loss, extra)
