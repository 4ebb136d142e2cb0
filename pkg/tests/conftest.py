import pytest

from darpbench.bench import Area
from darpbench.roadnet import build_travel_model
from darpbench.synthetic import synthetic_area


def small_city(seed=0, size=8, trips_per_hour=300):
    syn = synthetic_area(size, trips_per_hour, 0.5, 0.5, seed=seed)
    _, matrix = build_travel_model(syn.graph, syn.speeds)
    return syn, Area("tiny", matrix, syn.zones, syn.records, syn.start)


@pytest.fixture(scope="session")
def tiny_area():
    return small_city()[1]


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion."""
    def record(number, title, ok, detail=""):
        line = f"criterion {number} {title}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
        _VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
