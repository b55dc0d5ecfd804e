import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from asymcodec.config import preset
from asymcodec.imageio import list_images, read_image
from asymcodec.model import Model
from asymcodec.training import S0, StagePlan, TrainConfig, load_dataset, mark_ancestor, run_stage

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def train_images():
    return load_dataset(DATA / "train")


@pytest.fixture(scope="session")
def heldout_images():
    return [read_image(p) for p in list_images(DATA / "heldout")]


@dataclass
class ToyRun:
    untrained: Model
    model: Model
    log: list
    seconds: float
    config: TrainConfig


@pytest.fixture(scope="session")
def toy_s0(train_images):
    """The full toy S0 run: lambda 0.0130, 64x64 crops, 3000 steps, seed 0."""
    config = TrainConfig(lmbda=0.0130, crop=64, seed=0)
    untrained = Model(preset("Symmetric"), config.seed)
    model = untrained.copy()
    start = time.perf_counter()
    result = run_stage(model, StagePlan.for_stage(S0), train_images, config)
    seconds = time.perf_counter() - start
    mark_ancestor(model)
    model.info.update({"lambda": config.lmbda, "lambda_index": 3, "stage": S0})
    return ToyRun(untrained, model, result.log, seconds, config)
