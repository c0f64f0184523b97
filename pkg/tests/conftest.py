import numpy as np
import pytest

from fgsf.fim import gaussian_scores
from fgsf.harness.config import RunConfig
from fgsf.metrics import DormantSpec
from fgsf.nets import init_mlp
from fgsf.sac import SacConfig


def tiny_config(out, **run) -> RunConfig:
    """A run small enough for unit tests: 16-unit nets, 32-sample batches."""
    sac = SacConfig(batch_size=32, warmup_steps=64, hidden=(16, 16), buffer_capacity=2000)
    base = dict(env="pendulum", total_env_steps=400, log_every=20, eval_every=200, eval_episodes=1,
                seed=0, output_dir=str(out), record_wall_time=False, sac=sac, dormant=DormantSpec(probe_batch_size=32))
    base.update(run)
    return RunConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_scores(rng):
    """Gaussian-likelihood scores of a 3-4-2 tanh net on 32 samples (34 params)."""
    net = init_mlp([3, 4, 2], rng)
    x = rng.normal(size=(32, 3))
    y = rng.normal(size=(32, 2))
    return gaussian_scores(net, x, y)
