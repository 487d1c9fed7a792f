import pytest

from wscswap.losses import LossWeights
from wscswap.networks import ModelConfig
from wscswap.synthdata import DatasetConfig
from wscswap.trainer import TrainConfig


def tiny_train_config(**changes):
    model = changes.pop("model", ModelConfig.tiny())
    base = dict(steps=4, batch_size=4, model=model, data=DatasetConfig(resolution=32, exp_dim=2),
                weights=LossWeights())
    base.update(changes)
    return TrainConfig(**base)


@pytest.fixture
def tiny_config():
    return tiny_train_config


ACCEPTANCE = {}


def record(criterion: int, name: str, passed: bool, detail: str = ""):
    ACCEPTANCE[criterion] = (name, passed, detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{n:2d}] {'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())
