import time

import numpy as np
import pytest

from fracdil import kernels
from fracdil.pipeline import PipelineConfig, run_pipeline


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    """Run a test once per column-kernel backend."""
    prev = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


@pytest.fixture(scope="session")
def pinned_run(tmp_path_factory):
    """The default-config pipeline at seed 0, run once per session (several minutes)."""
    out = tmp_path_factory.mktemp("pinned")
    t0 = time.perf_counter()
    report = run_pipeline(PipelineConfig(seed=0), out)
    return {"report": report, "out": out, "seconds": time.perf_counter() - t0}


def pytest_terminal_summary(terminalreporter):
    from tests.helpers import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS):
        ok, line = RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {line}")
