import pytest

from msgflow.simulator import resolve_config, simulate

# one line per acceptance check, echoed after the run regardless of capture
ACCEPTANCE_LINES: list[str] = []


def record_verdict(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.line(line)


def _simulate_builtin(name, tmp_path_factory):
    out = tmp_path_factory.mktemp(name)
    simulate(resolve_config(name), out)
    return out


@pytest.fixture(scope="session")
def table1_bundle(tmp_path_factory):
    return _simulate_builtin("table1", tmp_path_factory)


@pytest.fixture(scope="session")
def slam_onboard_bundle(tmp_path_factory):
    return _simulate_builtin("slam_onboard", tmp_path_factory)


@pytest.fixture(scope="session")
def slam_split_bundle(tmp_path_factory):
    return _simulate_builtin("slam_split", tmp_path_factory)
