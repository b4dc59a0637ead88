import sys
from pathlib import Path

import numpy as np
import pytest

import cxrtriage as cx

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def synth60():
    """60-sample synthetic archive (20 per class)."""
    return cx.synthesize_dataset(20, seed=0)


@pytest.fixture(scope="session")
def overfit_run(synth60):
    """Custom CNN trained to saturation on the 60-sample archive."""
    net = cx.initialize(cx.build("custom_cnn", 1, 1.0), seed=0)
    plan = cx.split(synth60, 0.2, seed=0)
    cfg = cx.TrainConfig(epochs=30, batch_size=20, seed=0)
    history = cx.train(net, synth60, plan, cfg)
    return net, history


@pytest.fixture(scope="session")
def overfit_model_path(overfit_run, tmp_path_factory):
    net, _ = overfit_run
    path = tmp_path_factory.mktemp("model") / "overfit.cxrm"
    cx.save_model(net, str(path))
    return str(path)


@pytest.fixture(scope="session")
def stock_regime_run():
    """A full run at the stock training regime: synth 400/class,
    10 epochs, batch 120, 0.2 validation split."""
    import time

    archive = cx.synthesize_dataset(400, seed=0)
    plan = cx.split(archive, 0.2, seed=0)
    cfg = cx.TrainConfig(epochs=10, batch_size=120, val_fraction=0.2, seed=0)
    net = cx.initialize(cx.build("custom_cnn", 1, 1.0), seed=0)
    t0 = time.perf_counter()
    history = cx.train(net, archive, plan, cfg)
    wall = time.perf_counter() - t0
    return net, history, wall


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))
