import os
from pathlib import Path

import pytest

from harnet.data import load_dataset
from harnet.model import HarNetConfig
from harnet.synthetic import make_release

FIXTURE_ROOT = Path(__file__).parent / "fixtures" / "uci_har_mini"

# A configuration small enough for fast end-to-end tests.
TINY = dict(kernel_sizes=(1, 5, 9), filters_per_branch=2, fc1_units=24, fc2_units=12)


def real_data_root() -> Path | None:
    root = os.environ.get("HARNET_DATA_ROOT")
    if root and Path(root).is_dir():
        return Path(root)
    return None


@pytest.fixture(scope="session")
def fixture_root() -> Path:
    return FIXTURE_ROOT


@pytest.fixture(scope="session")
def mini():
    return load_dataset(FIXTURE_ROOT)


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory) -> Path:
    return make_release(tmp_path_factory.mktemp("release"), 240, 90, seed=11)


@pytest.fixture(scope="session")
def synthetic(synthetic_root):
    return load_dataset(synthetic_root)


@pytest.fixture
def tiny_config():
    return HarNetConfig(**TINY)


# ---------------------------------------------------------------- acceptance reporting

ACCEPTANCE_RESULTS: dict[int, str] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> str:
    line = f"ACCEPTANCE {number} {'PASS' if passed else 'FAIL'} | {title} | {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line, flush=True)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
