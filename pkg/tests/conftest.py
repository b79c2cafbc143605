import numpy as np
import pytest

from tripcast import featurize, synthgen
from tripcast.domain import Mode, RawTimes, TownContext, TownTable, TravelTimeTable, TripRecord


@pytest.fixture(scope="session")
def small_world():
    return synthgen.generate(synthgen.fixture("easy", n=400, seed=11, n_census=120))


@pytest.fixture(scope="session")
def small_table(small_world):
    w = small_world
    return featurize.build_table(w.trips, w.towns, w.travel_times, w.schema)


def two_town_world():
    """Two towns with three stats, all four travel-time entries per direction."""
    towns = TownTable(
        [
            TownContext("A", {"pop": 100.0, "poi": 3.0, "jobs": 10.0}),
            TownContext("B", {"pop": 250.0, "poi": 8.0, "jobs": 40.0}),
        ]
    )
    tt = TravelTimeTable()
    for o, d, road, transit in (("A", "B", 12.0, 25.0), ("B", "A", 14.0, 27.0), ("A", "A", 3.0, 9.0), ("B", "B", 4.0, 8.0)):
        tt.add(o, d, Mode.ROAD, road)
        tt.add(o, d, Mode.TRANSIT, transit)
    schema = featurize.FeatureSchema.build(("pop", "poi", "jobs"), ("age", "income"), ("gender", "job"))
    return towns, tt, schema


def make_trip(pid="p", origin="A", dest="B", age=30.0, gender="F", job="x", income=1.0, weight=1.0, survey="S0",
              times=(20.0, 487.0, 22.0, 1050.0)):
    return TripRecord(
        pid, survey, origin, dest, "work", {"age": age, "income": income, "gender": gender, "job": job}, weight, RawTimes(*times)
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion for the run summary."""

    def record(criterion: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
