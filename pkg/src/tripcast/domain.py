"""Time discretization, trip records and the lookup tables they refer to."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Mapping

N_SLOTS = 96
SLOT_MINUTES = 15.0
DAY_MINUTES = 1440.0

# Column order of every target matrix: TTtW, ATaW, TTtH, ATaH.
TASK_NAMES = ("travel_to_dest", "arrive_dest", "travel_to_home", "arrive_home")
N_TASKS = len(TASK_NAMES)
CLOCK_TASKS = (False, True, False, True)


class DomainError(ValueError):
    """A value lies outside the domain of a time or trip operation."""


class Purpose(str, Enum):
    WORK = "work"
    STUDY = "study"


class Mode(str, Enum):
    ROAD = "road"
    TRANSIT = "transit"


def task_labels(purpose: Purpose | str) -> tuple[str, ...]:
    """Short names (TTtW, ATaW, ...) of the four targets for a purpose."""
    p = "W" if Purpose(purpose) is Purpose.WORK else "S"
    return (f"TTt{p}", f"ATa{p}", "TTtH", "ATaH")


@dataclass(frozen=True, order=True)
class TimeSlot:
    """One of the 96 quarter-hour bins of a clock or duration axis."""

    index: int

    def __post_init__(self):
        if not isinstance(self.index, (int,)) or isinstance(self.index, bool):
            raise DomainError(f"slot index must be an int, got {self.index!r}")
        if not 0 <= self.index < N_SLOTS:
            raise DomainError(f"slot index {self.index} outside [0, {N_SLOTS})")

    @property
    def midpoint(self) -> float:
        return midpoint(self.index)

    def __int__(self) -> int:
        return self.index

    def __str__(self) -> str:
        start = int(self.index * SLOT_MINUTES)
        end = start + int(SLOT_MINUTES) - 1
        return f"{start // 60}:{start % 60:02d} to {end // 60}:{end % 60:02d}"


def midpoint(index: int) -> float:
    return SLOT_MINUTES * index + SLOT_MINUTES / 2


def slot_of_clock(minutes: float) -> TimeSlot:
    if not math.isfinite(minutes) or not 0.0 <= minutes < DAY_MINUTES:
        raise DomainError(f"clock time {minutes!r} min outside [0, 1440)")
    return TimeSlot(int(minutes // SLOT_MINUTES))


def slot_of_duration(minutes: float) -> TimeSlot:
    # durations of 24h or more saturate at the top bin
    if math.isnan(minutes) or minutes < 0.0:
        raise DomainError(f"duration {minutes!r} min is negative or NaN")
    if minutes >= DAY_MINUTES:
        return TimeSlot(N_SLOTS - 1)
    return TimeSlot(int(minutes // SLOT_MINUTES))


def departure_slot(arrival: TimeSlot, travel: TimeSlot) -> TimeSlot:
    """Departure clock slot as arrival minus travel, on slot midpoints, wrapping past midnight."""
    return slot_of_clock((arrival.midpoint - travel.midpoint) % DAY_MINUTES)


@dataclass(frozen=True)
class TargetQuadruple:
    travel_to_dest: TimeSlot
    arrive_dest: TimeSlot
    travel_to_home: TimeSlot
    arrive_home: TimeSlot

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (
            self.travel_to_dest.index,
            self.arrive_dest.index,
            self.travel_to_home.index,
            self.arrive_home.index,
        )

    @property
    def depart_home(self) -> TimeSlot:
        return departure_slot(self.arrive_dest, self.travel_to_dest)

    @property
    def depart_dest(self) -> TimeSlot:
        return departure_slot(self.arrive_home, self.travel_to_home)


@dataclass(frozen=True)
class RawTimes:
    """The four surveyed times in minutes, as they appear in input files."""

    travel_to_dest: float
    arrive_dest: float
    travel_to_home: float
    arrive_home: float

    def discretize(self) -> TargetQuadruple:
        return TargetQuadruple(
            slot_of_duration(self.travel_to_dest),
            slot_of_clock(self.arrive_dest),
            slot_of_duration(self.travel_to_home),
            slot_of_clock(self.arrive_home),
        )


def _freeze(mapping: Mapping) -> Mapping:
    return MappingProxyType(dict(mapping))


@dataclass(frozen=True)
class TripRecord:
    person_id: str
    survey_id: str
    origin_town: str
    dest_town: str
    purpose: Purpose
    person_attrs: Mapping[str, str | float]
    weight: float
    times: RawTimes
    targets: TargetQuadruple = field(init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "purpose", Purpose(self.purpose))
        object.__setattr__(self, "person_attrs", _freeze(self.person_attrs))
        if not (self.weight >= 0.0 and math.isfinite(self.weight)):
            raise DomainError(f"trip {self.person_id}: weight {self.weight!r} must be finite and >= 0")
        object.__setattr__(self, "targets", self.times.discretize())


@dataclass(frozen=True)
class CensusRecord:
    """A person with home and destination towns but no trip times."""

    person_id: str
    home_town: str
    dest_town: str
    purpose: Purpose
    person_attrs: Mapping[str, str | float]
    weight: float

    def __post_init__(self):
        object.__setattr__(self, "purpose", Purpose(self.purpose))
        object.__setattr__(self, "person_attrs", _freeze(self.person_attrs))
        if not (self.weight >= 0.0 and math.isfinite(self.weight)):
            raise DomainError(f"census record {self.person_id}: weight {self.weight!r} must be finite and >= 0")


@dataclass(frozen=True)
class TownContext:
    town_id: str
    stats: Mapping[str, float]

    def __post_init__(self):
        object.__setattr__(self, "stats", _freeze(self.stats))
        for name, value in self.stats.items():
            if not math.isfinite(value):
                raise DomainError(f"town {self.town_id}: stat {name} is not finite")


class TownTable(Mapping[str, TownContext]):
    """Town contexts keyed by id; a town may appear only once."""

    def __init__(self, towns=()):
        self._towns: dict[str, TownContext] = {}
        for town in towns:
            if town.town_id in self._towns:
                raise DomainError(f"town {town.town_id} appears more than once")
            self._towns[town.town_id] = town

    def __getitem__(self, town_id: str) -> TownContext:
        try:
            return self._towns[town_id]
        except KeyError:
            raise KeyError(f"unknown town {town_id!r}") from None

    def __iter__(self):
        return iter(self._towns)

    def __len__(self):
        return len(self._towns)

    def stat_names(self) -> tuple[str, ...]:
        names: set[str] = set()
        for town in self._towns.values():
            names.update(town.stats)
        return tuple(sorted(names))


class TravelTimeTable:
    """Theoretical travel minutes per (origin, destination, mode). Direction matters."""

    def __init__(self, entries: Mapping[tuple[str, str, Mode | str], float] | None = None):
        self._entries: dict[tuple[str, str, Mode], float] = {}
        for (o, d, mode), minutes in (entries or {}).items():
            self.add(o, d, mode, minutes)

    def add(self, origin: str, dest: str, mode: Mode | str, minutes: float) -> None:
        minutes = float(minutes)
        if not (math.isfinite(minutes) and minutes >= 0.0):
            raise DomainError(f"travel time {origin}->{dest} ({mode}) must be finite and >= 0, got {minutes!r}")
        self._entries[(origin, dest, Mode(mode))] = minutes

    def lookup(self, origin: str, dest: str, mode: Mode | str) -> float:
        try:
            return self._entries[(origin, dest, Mode(mode))]
        except KeyError:
            raise KeyError(f"no {Mode(mode).value} travel time for pair {origin!r} -> {dest!r}") from None

    def items(self):
        return sorted(self._entries.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value))

    def __len__(self):
        return len(self._entries)

    def __contains__(self, key) -> bool:
        o, d, mode = key
        return (o, d, Mode(mode)) in self._entries
