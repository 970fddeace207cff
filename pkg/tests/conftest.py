import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from postdae.checkpoint import load_checkpoint, save_checkpoint
from postdae.dae import DAEArchitectureSpec, DAETrainConfig, train_dae
from postdae.data import synthetic_masks

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# shared budget for the 128 px model trained once per session
DAE_TRAIN_MASKS = 500
DAE_EPOCHS = 100


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def trained_dae():
    """DAE trained on the synthetic 128 px dataset, with its training CPU time."""
    cache = os.environ.get("POSTDAE_ACCEPTANCE_CACHE")
    if cache and (Path(cache) / "dae" / "checkpoint.json").exists():
        ckpt = load_checkpoint(Path(cache) / "dae")
        return ckpt, float(ckpt.extra["train_cpu_seconds"])
    masks = synthetic_masks(DAE_TRAIN_MASKS, 128, seed=0)
    cfg = DAETrainConfig(learning_rate=1e-4, batch_size=15, epochs=DAE_EPOCHS, seed=0)
    start = time.process_time()
    ckpt = train_dae(masks, cfg, DAEArchitectureSpec(input_size=128))
    cpu = time.process_time() - start
    ckpt.extra["train_cpu_seconds"] = cpu
    if cache:
        save_checkpoint(ckpt, Path(cache) / "dae")
    return ckpt, cpu


def random_masks(rng, n, shape, density=None):
    """``n`` random masks; densities vary per mask unless fixed."""
    out = []
    for _ in range(n):
        p = rng.uniform(0.1, 0.9) if density is None else density
        out.append(rng.random(shape) < p)
    return out


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance_log.LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
