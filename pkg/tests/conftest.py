import pytest
from hypothesis import HealthCheck, settings

from hytegrid import mesh as M

settings.register_profile("repo", deadline=None, max_examples=30, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def two_face_setup():
    return M.build_setup_graph(M.unit_square())


@pytest.fixture
def ring_setup():
    return M.build_setup_graph(M.square_ring())


def pytest_terminal_summary(terminalreporter):
    from .helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
