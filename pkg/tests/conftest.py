import numpy as np
import pytest


def pytest_addoption(parser):
    parser.addoption(
        "--run-paper",
        action="store_true",
        default=False,
        help="run the multi-hour single-image reproductions of the published trends",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-paper"):
        return
    skip = pytest.mark.skip(reason="long reproduction; pass --run-paper to run")
    for item in items:
        if "paper" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        prev = _criteria.get(name)
        # a criterion with several parametrized cases passes only if all of them do
        if prev in ("FAIL", "SKIP") and status == "PASS":
            status = prev
        _criteria[name] = status


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _criteria.items():
        terminalreporter.write_line(f"{status:4}  {name}")
