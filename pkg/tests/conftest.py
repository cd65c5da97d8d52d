import numpy as np
import pytest

from thetaring.bamodule import BAParams
from thetaring.harness import RunConfig, build_report, draw_translates, \
    run_pipeline
from thetaring.theta import RiemannMatrix, ThetaBackend

OMEGA_DEFAULT = ((1.0j, 0.3j), (0.3j, 1.2j))


@pytest.fixture(scope="session")
def omega() -> RiemannMatrix:
    return RiemannMatrix(np.array(OMEGA_DEFAULT))


@pytest.fixture(scope="session")
def backend(omega) -> ThetaBackend:
    return ThetaBackend(omega)


@pytest.fixture(scope="session")
def params(omega, backend) -> BAParams:
    c, cp = draw_translates(omega, seed=0, attempt=0)
    return BAParams(omega, c, cp, backend=backend)


@pytest.fixture(scope="session")
def pipeline_result():
    """The default verification run, shared by operator-level tests and
    the acceptance suite (building the ring once keeps the session fast)."""
    return run_pipeline(RunConfig())


@pytest.fixture(scope="session")
def report(pipeline_result):
    return build_report(pipeline_result)
