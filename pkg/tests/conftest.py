import numpy as np
import pytest

from arl.datagen import DatasetConfig, generate_episode, sample_scene
from arl.scene import GROUND, ObjectNode, SceneGraph


def obj(slot, color="red", shape="cube", size="big", material="metal", x=0.5, y=0.5, support=GROUND):
    return ObjectNode(slot, color, shape, size, material, x, y, support)


def scene(*objects):
    return SceneGraph(tuple(objects))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def random_scenes():
    r = np.random.default_rng(123)
    return [sample_scene(r) for _ in range(300)]


@pytest.fixture(scope="session")
def small_dataset():
    cfg = DatasetConfig(seed=3)
    return {split: [generate_episode(cfg, split, i) for i in range(n)]
            for split, n in (("train", 400), ("val", 80), ("test", 80), ("2hop_ta", 30), ("2hop_qh", 30))}


# one line per acceptance criterion, shown after the test run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
