from pathlib import Path

import numpy as np
import pytest

from wdncnn.imageio import list_images, read_image

DATA = Path(__file__).parent / "data"
IMAGES = DATA / "images"


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def train_images():
    return [read_image(p) for p in list_images(IMAGES / "train")]


@pytest.fixture(scope="session")
def heldout_images():
    return [read_image(p) for p in list_images(IMAGES / "heldout")]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
