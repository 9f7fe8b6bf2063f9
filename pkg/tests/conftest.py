import sys

import numpy as np
import pytest

from orspoken.dataset import load_detections, load_manifest
from orspoken.fixtures import mini_dataset_dir
from orspoken.lop import load_class_vocabulary
from orspoken.vgsr import load_embedding_table


@pytest.fixture(scope="session")
def mini_dir():
    return mini_dataset_dir()


@pytest.fixture(scope="session")
def mini_manifest(mini_dir):
    return load_manifest(mini_dir / "manifest.jsonl")


@pytest.fixture(scope="session")
def mini_detections(mini_dir):
    return load_detections(mini_dir / "detections.jsonl")


@pytest.fixture(scope="session")
def mini_table(mini_dir):
    return load_embedding_table(mini_dir / "embeddings.txt")


@pytest.fixture(scope="session")
def mini_vocab(mini_dir):
    return load_class_vocabulary(mini_dir / "classes.txt")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
