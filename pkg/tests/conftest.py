import numpy as np
import pytest
import torch

from promptloc.dataset import SynthConfig, build_dataset, toy_pool

# acceptance results, printed as one line per criterion at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str, seconds: float) -> None:
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {status}  {detail}  ({seconds:.2f} s)"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Eight toy mixtures written to disk; shared by dataset / training / CLI tests."""
    out = tmp_path_factory.mktemp("small_ds")
    build_dataset(SynthConfig(n_records=8), seed=3, out_dir=out, pool=toy_pool(4, 2))
    return out
