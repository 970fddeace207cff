"""UNet baseline segmenter, checkpointed periodically during training."""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass
from typing import Sequence

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
from .errors import DimensionMismatch, EmptyDataset, InvalidConfig, InvalidSpec
from .masks import as_mask

log = logging.getLogger(__name__)

KIND = "unet"


@dataclass(frozen=True)
class UNetArchitectureSpec:
    input_size: int = 1024
    channels: tuple[int, ...] = (16, 32, 64, 128)
    bottleneck: int = 256
    dropout_keep: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        depth = 2 ** len(self.channels)
        if self.input_size < depth or self.input_size % depth:
            raise InvalidSpec(f"input_size must be a positive multiple of {depth}")
        if not 0 < self.dropout_keep <= 1:
            raise InvalidSpec("dropout_keep must be in (0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass
class UNetTrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 4
    checkpoint_period: int = 5
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    epsilon: float = 1.0

    def __post_init__(self):
        if self.checkpoint_period < 1:
            raise InvalidConfig("checkpoint_period must be >= 1")
        if not self.learning_rate > 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise InvalidConfig("learning_rate, batch_size and max_epochs must be positive")
        if self.patience < 1:
            raise InvalidConfig("patience must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def _double_conv(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1), nn.ReLU(),
        nn.Conv2d(c_out, c_out, 3, padding=1), nn.ReLU(),
    )


class UNet(nn.Module):
    def __init__(self, spec: UNetArchitectureSpec):
        super().__init__()
        self.spec = spec
        self.down = nn.ModuleList()
        c_in = 1
        for c in spec.channels:
            self.down.append(_double_conv(c_in, c))
            c_in = c
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _double_conv(c_in, spec.bottleneck)
        self.dropout = nn.Dropout(1.0 - spec.dropout_keep)
        self.upconv = nn.ModuleList()
        self.up = nn.ModuleList()
        c_in = spec.bottleneck
        for c in reversed(spec.channels):
            self.upconv.append(nn.Sequential(
                nn.ConvTranspose2d(c_in, c, 3, stride=2, padding=1, output_padding=1),
                nn.ReLU(),
            ))
            self.up.append(_double_conv(2 * c, c))
            c_in = c
        self.head = nn.Sequential(
            nn.Conv2d(c_in, 2, 3, padding=1), nn.ReLU(),
            nn.Conv2d(2, 1, 1), nn.Sigmoid(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
            x = self.pool(x)
        x = self.dropout(self.bottleneck(x))
        for upconv, block, skip in zip(self.upconv, self.up, reversed(skips)):
            x = block(torch.cat([upconv(x), skip], dim=1))
        return self.head(x)


def build_unet(spec: UNetArchitectureSpec | None = None, seed: int = 0) -> ModelCheckpoint:
    spec = spec or UNetArchitectureSpec()
    with seeded(seed):
        net = UNet(spec)
        init_fan_in_(net)
    return ModelCheckpoint(KIND, spec.to_dict(), state_to_numpy(net), 0)


def load_unet(ckpt: ModelCheckpoint) -> UNet:
    if ckpt.kind != KIND:
        raise InvalidSpec(f"expected a {KIND} checkpoint, got {ckpt.kind!r}")
    net = UNet(UNetArchitectureSpec(**ckpt.architecture))
    ckpt.check_shapes(expected_shapes(net))
    load_numpy_state(net, ckpt.weights)
    return net.eval()


def _net(model) -> UNet:
    return model if isinstance(model, UNet) else load_unet(model)


def predict_unet(model, images: Sequence[np.ndarray], batch_size: int = 4) -> list[np.ndarray]:
    """Foreground probability maps (eval mode, dropout off)."""
    net = _net(model).eval()
    s = net.spec.input_size
    for img in images:
        if np.shape(img) != (s, s):
            raise DimensionMismatch(f"image {np.shape(img)} does not match input_size {s}")
    out = []
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            probs = net(to_batch(images[i : i + batch_size]))
            out.extend(p[0].numpy().astype(np.float64) for p in probs)
    return out


def _mean_dice(net: UNet, images, masks) -> float:
    probs = predict_unet(net, images)
    scores = []
    for p, m in zip(probs, masks):
        pred = p >= 0.5
        total = pred.sum() + m.sum()
        scores.append(1.0 if total == 0 else 2.0 * (pred & m).sum() / total)
    return float(np.mean(scores))


def train_unet(
    images: Sequence[np.ndarray],
    masks: Sequence[np.ndarray],
    cfg: UNetTrainConfig | None = None,
    val_images: Sequence[np.ndarray] | None = None,
    val_masks: Sequence[np.ndarray] | None = None,
    spec: UNetArchitectureSpec | None = None,
) -> list[ModelCheckpoint]:
    """Train with soft Dice and Adam; snapshot every ``checkpoint_period`` epochs.

    Training stops after ``patience`` epochs without a new best validation Dice
    (or at ``max_epochs``). The returned list holds the periodic snapshots
    (``extra["stage"] == "periodic"``) followed by one ``"converged"``
    checkpoint carrying the best-validation weights (the last epoch's weights
    when no validation set is given).
    """
    cfg = cfg or UNetTrainConfig()
    if len(images) == 0:
        raise EmptyDataset("no training images")
    if len(images) != len(masks):
        raise DimensionMismatch("images and masks differ in number")
    masks = [as_mask(m) for m in masks]
    for img, m in zip(images, masks):
        if np.shape(img) != m.shape:
            raise DimensionMismatch(f"image {np.shape(img)} and mask {m.shape} differ")
    spec = spec or UNetArchitectureSpec(input_size=masks[0].shape[0])
    validate = val_images is not None and len(val_images) > 0
    if validate:
        val_masks = [as_mask(m) for m in val_masks]

    net = load_unet(build_unet(spec, cfg.seed)).train()
    with seeded(cfg.seed):
        opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    x_all = to_batch(images)
    y_all = to_batch(masks)
    order_rng = np.random.default_rng([cfg.seed, 0x0E7])

    history: list[float] = []
    snapshots: list[ModelCheckpoint] = []
    best = (-1.0, 0, None)  # (val dice, epoch, state)
    with seeded(cfg.seed):  # dropout masks
        for epoch in range(1, cfg.max_epochs + 1):
            net.train()
            losses = []
            order = order_rng.permutation(len(masks))
            for i in range(0, len(order), cfg.batch_size):
                idx = order[i : i + cfg.batch_size]
                loss = batch_soft_dice_loss(net(x_all[idx]), y_all[idx], cfg.epsilon)
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(loss.item())
            history.append(float(np.mean(losses)))
            net.eval()
            val = _mean_dice(net, val_images, val_masks) if validate else float("nan")
            log.debug("unet epoch %d loss %.4f val dice %.4f", epoch, history[-1], val)
            if validate and val > best[0]:
                best = (val, epoch, copy.deepcopy(net.state_dict()))
            if epoch % cfg.checkpoint_period == 0:
                snapshots.append(ModelCheckpoint(
                    KIND, spec.to_dict(), state_to_numpy(net), epoch, list(history),
                    {"stage": "periodic", "val_dice": val},
                ))
            if validate and epoch - best[1] >= cfg.patience:
                break

    if validate:
        net.load_state_dict(best[2])
        final_epoch, final_val = best[1], best[0]
    else:
        final_epoch, final_val = len(history), float("nan")
    snapshots.append(ModelCheckpoint(
        KIND, spec.to_dict(), state_to_numpy(net), final_epoch, list(history),
        {"stage": "converged", "val_dice": final_val, "epochs_run": len(history),
         "train_config": cfg.to_dict()},
    ))
    return snapshots


def stage_name(ckpt: ModelCheckpoint) -> str:
    if ckpt.extra.get("stage") == "converged":
        return "unet-converged"
    return f"unet-epoch-{ckpt.epoch}"
