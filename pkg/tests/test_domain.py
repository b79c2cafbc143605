import math

import pytest
from hypothesis import given, strategies as st

from tripcast.domain import (
    DAY_MINUTES,
    N_SLOTS,
    DomainError,
    Mode,
    RawTimes,
    TimeSlot,
    TownContext,
    TownTable,
    TravelTimeTable,
    TripRecord,
    departure_slot,
    midpoint,
    slot_of_clock,
    slot_of_duration,
    task_labels,
)

slots = st.integers(0, N_SLOTS - 1).map(TimeSlot)


@pytest.mark.parametrize("minutes, slot", [(0.0, 0), (487.0, 32), (1439.0, 95), (14.999, 0), (15.0, 1)])
def test_slot_of_clock_examples(minutes, slot):
    assert slot_of_clock(minutes).index == slot


@pytest.mark.parametrize("bad", [-0.01, 1440.0, 2000.0, math.nan, math.inf])
def test_slot_of_clock_rejects_out_of_range(bad):
    with pytest.raises(DomainError):
        slot_of_clock(bad)


@pytest.mark.parametrize("minutes, slot", [(14.9, 0), (75.0, 5), (1439.9, 95), (1440.0, 95), (2000.0, 95), (math.inf, 95)])
def test_slot_of_duration_examples(minutes, slot):
    assert slot_of_duration(minutes).index == slot


@pytest.mark.parametrize("bad", [-1.0, math.nan])
def test_slot_of_duration_rejects_negative(bad):
    with pytest.raises(DomainError):
        slot_of_duration(bad)


@pytest.mark.parametrize("arrive, travel, depart", [(34, 0, 34), (34, 2, 32), (0, 4, 92), (95, 95, 0)])
def test_departure_slot_examples(arrive, travel, depart):
    assert departure_slot(TimeSlot(arrive), TimeSlot(travel)).index == depart


def test_midpoints():
    assert midpoint(0) == 7.5
    assert TimeSlot(32).midpoint == 487.5
    assert TimeSlot(95).midpoint == 1432.5


@pytest.mark.parametrize("bad", [-1, 96, 1.0, True])
def test_timeslot_validates(bad):
    with pytest.raises(DomainError):
        TimeSlot(bad)


@given(st.floats(0.0, DAY_MINUTES, exclude_max=True))
def test_clock_roundtrip_within_half_slot(m):
    assert abs(slot_of_clock(m).midpoint - m) <= 7.5


@given(slots, slots)
def test_departure_plus_travel_relands_near_arrival(arrive, travel):
    dep = departure_slot(arrive, travel)
    back = (dep.midpoint + travel.midpoint) % DAY_MINUTES
    diff = abs(back - arrive.midpoint)
    assert min(diff, DAY_MINUTES - diff) < 15.0


def test_clock_slots_partition_the_day():
    counts = [0] * N_SLOTS
    for m in range(1440):
        counts[slot_of_clock(float(m)).index] += 1
    assert counts == [15] * N_SLOTS


def test_task_labels():
    assert task_labels("work") == ("TTtW", "ATaW", "TTtH", "ATaH")
    assert task_labels("study") == ("TTtS", "ATaS", "TTtH", "ATaH")


def test_trip_record_discretizes_and_validates():
    t = TripRecord("p", "s", "A", "B", "work", {"age": 30}, 1.5, RawTimes(20.0, 487.0, 75.0, 1439.0))
    assert t.targets.as_tuple() == (1, 32, 5, 95)
    assert t.targets.depart_home.index == departure_slot(TimeSlot(32), TimeSlot(1)).index
    with pytest.raises(TypeError):
        t.person_attrs["age"] = 3
    with pytest.raises(DomainError):
        TripRecord("p", "s", "A", "B", "work", {}, -1.0, RawTimes(20.0, 487.0, 75.0, 1000.0))
    with pytest.raises(DomainError):
        TripRecord("p", "s", "A", "B", "work", {}, 1.0, RawTimes(20.0, 1440.0, 75.0, 1000.0))
    with pytest.raises(ValueError):
        TripRecord("p", "s", "A", "B", "leisure", {}, 1.0, RawTimes(20.0, 400.0, 75.0, 1000.0))


def test_town_table():
    towns = TownTable([TownContext("A", {"pop": 1.0}), TownContext("B", {"pop": 2.0, "poi": 3.0})])
    assert towns.stat_names() == ("poi", "pop")
    with pytest.raises(KeyError, match="unknown town 'Z'"):
        towns["Z"]
    with pytest.raises(DomainError):
        TownTable([TownContext("A", {}), TownContext("A", {})])
    with pytest.raises(DomainError):
        TownContext("C", {"pop": math.nan})


def test_travel_time_table_is_directional():
    tt = TravelTimeTable()
    tt.add("A", "B", Mode.ROAD, 10.0)
    tt.add("B", "A", "road", 12.0)
    assert tt.lookup("A", "B", "road") == 10.0
    assert tt.lookup("B", "A", Mode.ROAD) == 12.0
    assert ("A", "B", "road") in tt and ("A", "B", "transit") not in tt
    with pytest.raises(KeyError, match="'A' -> 'C'"):
        tt.lookup("A", "C", "road")
    with pytest.raises(DomainError):
        tt.add("A", "C", "road", -1.0)
    assert [k for k, _ in tt.items()] == [("A", "B", Mode.ROAD), ("B", "A", Mode.ROAD)]
