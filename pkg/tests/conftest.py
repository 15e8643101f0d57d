import pathlib
import sys

import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

REPO = pathlib.Path(__file__).resolve().parents[1]
FILTER_TEST = REPO / "models" / "filter_test.json"


@pytest.fixture(scope="session")
def filter_test_path() -> pathlib.Path:
    return FILTER_TEST


@pytest.fixture(scope="session")
def filter_net():
    from attackpaths.model import load_network_file

    return load_network_file(FILTER_TEST)
