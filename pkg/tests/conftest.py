import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import studies
    if not studies.RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for key in sorted(studies.RESULTS, key=lambda k: int(k[1:])):
        for line in studies.RESULTS[key].lines():
            tr.write_line(line)
    if studies.SQUARE_P2_LEVELS != studies.SQUARE_LEVELS:
        tr.write_line("note: P2 square studies used nele = %s; set CIPFEM_ACCEPTANCE_FULL=1 "
                      "to include 320" % (studies.SQUARE_P2_LEVELS,))
