import pytest

from prefnav.bundle import train_bundle
from prefnav.catalog import DEFAULT_RANKING, known_terrains
from prefnav.config import TrainingConfig
from prefnav.data import gen_data


@pytest.fixture(scope="session")
def known_data():
    return gen_data(known_terrains(), 8, 0).split(0)


@pytest.fixture(scope="session")
def minus_model(known_data):
    return train_bundle(known_data, DEFAULT_RANKING, TrainingConfig(), seed=0)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in order."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            name = rep.nodeid.rsplit("::", 1)[-1]
            if "test_acceptance.py" not in rep.nodeid or not name.startswith("test_criterion_"):
                continue
            if rep.when != "call" and not rep.failed:
                continue
            evidence = dict(rep.user_properties).get("evidence", "")
            num, topic = name.removeprefix("test_criterion_").split("_", 1)
            lines.append((int(num), f"criterion {int(num):2d} {'PASS' if rep.passed else 'FAIL'}  "
                          f"{topic.replace('_', ' ')}: {evidence}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
