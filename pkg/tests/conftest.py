from __future__ import annotations

from pathlib import Path

import pytest
import yaml

from reroute.pipeline import load_config, train
from reroute.synthgen import ScenarioConfig, generate_scenario, pipeline_config

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def fig1_text() -> str:
    return (DATA / "fig1_advisory.txt").read_text()


@pytest.fixture(scope="session")
def small_scenario(tmp_path_factory):
    """Ten days with frequent events; cheap enough to train on in tests."""
    root = tmp_path_factory.mktemp("scenario")
    config = ScenarioConfig(days=10, event_day_rate=0.5, seed=11)
    scenario = generate_scenario(config, root)
    cfg = pipeline_config(config, scenario.start, scenario.end, n_estimators=8)
    cfg["learners"] = [{"preset": "rf-paper", "n_estimators": 8}, {"preset": "extra-paper", "n_estimators": 8}]
    cfg["cv"] = {"k": 3}
    scenario.config_path.write_text(yaml.safe_dump(cfg, sort_keys=True))
    return scenario


@pytest.fixture(scope="session")
def trained_scenario(small_scenario):
    config = load_config(small_scenario.config_path)
    results = train(config)
    return small_scenario, config, results


# --- acceptance reporting ---------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.failed or (report.when == "call" and report.passed):
        previous = _CRITERIA.get(number, (None, ""))[0]
        status = "FAIL" if report.failed or previous == "FAIL" else "PASS"
        _CRITERIA[number] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title = _CRITERIA[number]
        terminalreporter.write_line(f"{status} criterion {number:>2}: {title}")
