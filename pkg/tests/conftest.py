import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hierflow import _kernels_py
from hierflow.model import Dataset, PriorSpec

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

try:
    from hierflow import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

BACKENDS = [pytest.param(_kernels_py, id="python")]
if _kernels_c is not None:
    BACKENDS.append(pytest.param(_kernels_c, id="cython"))

# criterion number -> (passed, detail); filled by the acceptance tests
ACCEPTANCE_RESULTS: dict = {}


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def small_data():
    rng = np.random.default_rng(5)
    samples = [np.vstack([rng.normal([0, 0], 0.3, (30, 2)), rng.normal([3, 3], 0.3, (20, 2))]) for _ in range(3)]
    return Dataset(samples, marker_names=["a", "b"])


def simple_prior(K=2, d=2, **kw):
    base = dict(t=np.zeros((K, d)), S=np.eye(d) * 4.0, Q=np.eye(d) * 0.5, H=np.eye(d), lam=0.2,
                n_theta=d + 4.0, n_psi=d + 2.0, a=1.0, c_s=1.0, mu0=np.zeros(d), sigma0=np.eye(d) * 25.0)
    base.update(kw)
    return PriorSpec(**base)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        status, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status:4s} {detail}")
