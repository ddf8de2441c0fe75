import pytest
from hypothesis import HealthCheck, settings

from pcor.fixtures import preset_fixture, income_dataset

settings.register_profile(
    "pcor", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("pcor")


@pytest.fixture(scope="session")
def income():
    return income_dataset()


@pytest.fixture(scope="session")
def small():
    """t = 12 synthetic fixture with planted hidden outliers."""
    return preset_fixture("small")


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the assertion still decides pass or fail."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"AC{number:<2} {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s[2:4])):
            terminalreporter.write_line(line)
