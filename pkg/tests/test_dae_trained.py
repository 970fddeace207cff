"""Behaviour of the 128 px DAE after desk-scale training (shares the session model)."""
import numpy as np
import pytest

from postdae.dae import binarize, decode, encode, load_dae, postprocess_batch
from postdae.data import synthetic_masks
from postdae.metrics import dice

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def net(trained_dae):
    return load_dae(trained_dae[0])


def test_empty_and_full_masks_have_distinct_codes(net):
    zero = encode(net, np.zeros((128, 128), bool))
    one = encode(net, np.ones((128, 128), bool))
    assert np.linalg.norm(zero - one) > 0


def test_training_masks_reconstruct(net):
    # the first masks of the training set (same generator seed)
    masks = synthetic_masks(20, 128, seed=0)
    scores = [dice(m, binarize(decode(net, encode(net, m)), 0.5)) for m in masks]
    assert min(scores) >= 0.9


def test_batch_postprocess_matches_single(net):
    masks = synthetic_masks(3, 128, seed=77)
    batch = postprocess_batch(net, masks)
    for m, out in zip(masks, batch):
        # batched float32 arithmetic may flip a pixel sitting exactly at the threshold
        assert dice(out, binarize(decode(net, encode(net, m)), 0.5)) > 0.999


def test_loss_falls_after_ten_epochs(trained_dae):
    history = trained_dae[0].loss_history
    assert len(history) >= 10
    assert history[9] < history[0]
