import numpy as np
import pytest

from dsr import kernels
from dsr.slicing import SlicingConfig
from dsr.synthetic import make_collection


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    """Run a test once per available kernel backend."""
    previous = kernels.BACKEND
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(previous)


@pytest.fixture
def toy_config():
    # M=3, N=5 over a 15-dim vocabulary, nothing discarded
    return SlicingConfig(vocab_size=15, discard_prefix=0, m_slices=3, n_width=5, strategy="contiguous")


@pytest.fixture(scope="session")
def small_collection():
    return make_collection(num_docs=600, num_queries=25, seed=3)


@pytest.fixture(scope="session")
def synthetic_10k():
    return make_collection(num_docs=10_000, num_queries=100, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict; printed as it happens and again in the summary."""
    results = request.config.stash[_ACCEPTANCE_KEY]

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        results[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_ACCEPTANCE_KEY, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
