import numpy as np
import pytest
import torch

from postdae.data import synthetic_samples
from postdae.errors import DimensionMismatch, EmptyDataset, InvalidConfig, InvalidSpec
from postdae.metrics import dice
from postdae.unet import (
    UNetArchitectureSpec,
    UNetTrainConfig,
    build_unet,
    load_unet,
    predict_unet,
    stage_name,
    train_unet,
)

SPEC = UNetArchitectureSpec(input_size=32, channels=(4, 8), bottleneck=8)


@pytest.fixture(scope="module")
def data():
    samples = list(synthetic_samples(6, 32, seed=3))
    return [s[1] for s in samples], [s[2] for s in samples]


def test_forward_shapes_and_range(data):
    images, _ = data
    probs = predict_unet(build_unet(SPEC, seed=0), images[:3])
    assert len(probs) == 3
    for p in probs:
        assert p.shape == (32, 32) and p.min() >= 0 and p.max() <= 1
    with pytest.raises(DimensionMismatch):
        predict_unet(build_unet(SPEC), [np.zeros((16, 16))])


def test_default_spec_shapes():
    net = load_unet(build_unet(UNetArchitectureSpec(input_size=64), seed=0))
    assert net.spec.channels == (16, 32, 64, 128)


def test_periodic_and_converged_checkpoints(data):
    images, masks = data
    cfg = UNetTrainConfig(learning_rate=1e-3, batch_size=2, checkpoint_period=5,
                          max_epochs=12, patience=100)
    ckpts = train_unet(images, masks, cfg, images[:2], masks[:2], SPEC)
    assert [stage_name(c) for c in ckpts] == ["unet-epoch-5", "unet-epoch-10", "unet-converged"]
    conv = ckpts[-1]
    assert conv.extra["epochs_run"] == 12
    assert 1 <= conv.epoch <= 12
    assert len(conv.loss_history) == 12


def test_early_stopping_and_determinism(data):
    images, masks = data
    cfg = UNetTrainConfig(learning_rate=1e-3, batch_size=3, max_epochs=30, patience=1,
                          checkpoint_period=50)
    a = train_unet(images, masks, cfg, images[:2], masks[:2], SPEC)
    b = train_unet(images, masks, cfg, images[:2], masks[:2], SPEC)
    assert a[-1].extra["epochs_run"] < 30
    assert a[-1].loss_history == b[-1].loss_history
    for k in a[-1].weights:
        np.testing.assert_array_equal(a[-1].weights[k], b[-1].weights[k])


def test_without_validation_uses_last_epoch(data):
    images, masks = data
    cfg = UNetTrainConfig(batch_size=3, max_epochs=2, checkpoint_period=1)
    ckpts = train_unet(images, masks, cfg, spec=SPEC)
    assert ckpts[-1].epoch == 2
    for k in ckpts[-1].weights:
        np.testing.assert_array_equal(ckpts[-1].weights[k], ckpts[-2].weights[k])


def test_errors(data):
    images, masks = data
    with pytest.raises(EmptyDataset):
        train_unet([], [], spec=SPEC)
    with pytest.raises(DimensionMismatch):
        train_unet(images, masks[:2], spec=SPEC)
    with pytest.raises(InvalidSpec):
        UNetArchitectureSpec(input_size=30)
    with pytest.raises(InvalidSpec):
        UNetArchitectureSpec(dropout_keep=0)
    with pytest.raises(InvalidConfig):
        UNetTrainConfig(checkpoint_period=0)


def test_overfits_one_image(data):
    images, masks = data
    cfg = UNetTrainConfig(learning_rate=1e-3, batch_size=1, max_epochs=200,
                          checkpoint_period=200, seed=0)
    ckpt = train_unet(images[:1], masks[:1], cfg, spec=SPEC)[-1]
    pred = predict_unet(ckpt, images[:1])[0] >= 0.5
    assert dice(pred, masks[0]) > 0.95


def test_eval_passes_ignore_dropout(data):
    images, _ = data
    net = load_unet(build_unet(SPEC, seed=2))
    a = predict_unet(net, images[:2])
    b = predict_unet(net, images[:2])
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    # while training mode does resample dropout
    net.train()
    x = torch.as_tensor(np.stack(images[:1])[:, None], dtype=torch.float32)
    assert not torch.equal(net(x), net(x))


def test_same_seed_same_init():
    a, b = build_unet(SPEC, seed=4), build_unet(SPEC, seed=4)
    assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)


def test_full_size_forward():
    ckpt = build_unet(UNetArchitectureSpec(input_size=1024), seed=0)
    prob = predict_unet(ckpt, [np.zeros((1024, 1024))])[0]
    assert prob.shape == (1024, 1024) and prob.min() >= 0 and prob.max() <= 1
