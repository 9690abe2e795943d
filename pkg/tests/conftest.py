import numpy as np
import pytest

_ACCEPTANCE = []


class Verdicts:
    """Collects one verdict line per acceptance criterion."""

    def record(self, number, title, passed, detail=""):
        _ACCEPTANCE.append((number, title, bool(passed), detail))
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {title} - {detail}")
        return bool(passed)


@pytest.fixture(scope="session")
def verdicts():
    return Verdicts()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}  [{detail}]")
