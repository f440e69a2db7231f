import numpy as np
import pytest

from hicome.config import Config
from hicome.dataset import SyntheticSpec, generate_synthetic
from hicome.model import ModelConfig

TINY_MODEL = dict(
    resolution=32,
    stage_channels=(8, 16, 16, 32),
    patch_sizes=(4, 2, 2, 2),
    sr_ratios=(4, 2, 1, 1),
    n_heads=(1, 1, 2, 2),
    depths=(1, 1, 1, 1),
    consensus_dim=16,
    si_ratios=(2, 2, 2),
    decoder_channels=(16, 16, 8),
    decoder_heads=(1, 1, 1),
    decoder_depths=(1, 1, 1),
    mlp_ratio=2,
)


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(**TINY_MODEL)


def tiny_config(**train) -> Config:
    data = {
        "model": dict(TINY_MODEL),
        "train": {"epochs": 2, "lr_initial": 1e-3, "lr_drop_epoch": 1, "checkpoint_every": 1, **train},
        "batching": {"batch_size": 4, "n_negatives": 1, "resolution": 32},
    }
    data["model"] = {k: list(v) if isinstance(v, tuple) else v for k, v in data["model"].items()}
    return Config.from_dict(data)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def small_ds():
    return generate_synthetic(SyntheticSpec(n_groups=3, group_size=4, image_size=32, seed=1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
