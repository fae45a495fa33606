import pytest

from coopt.config import ExperimentConfig

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = marker.args
        _CRITERIA.append((number, title, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, outcome in sorted(_CRITERIA):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title}")


@pytest.fixture
def small_config():
    """A fast configuration: small benchmark, short training."""
    return ExperimentConfig().with_overrides(**{
        "dataset.n_samples": 400, "dataset.n_eval": 400, "dataset.dim": 16,
        "downstream.epochs": 3, "downstream.hidden": [16], "shared_fraction": 0.2,
    })
