"""Seeded synthetic worlds: towns, travel times, surveyed trips and census records.

Trip times follow a planted model so that tests can check what a learner
recovers:

    arrive_dest = archetype arrival + rho * 90 * latent + sigma * noise
    travel      = theoretical time(mode) * archetype multiplier * (1 + 0.3 * rho * latent) + sigma * noise
    arrive_home = arrive_dest + archetype stay + rho * 60 * latent + travel_to_home

The latent factor is a per-sector schedule offset in [-1, 1]: every person
in a sector shares it, it couples all four targets, and it can only be
learned from the trips of that sector. With many sectors and few trips
each, a model that pools the four targets estimates it better than one
that sees a single target. Other signal modes replace this model wholesale
(``noise``, ``relevance``) or add an XOR-style term on top of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .domain import CensusRecord, Mode, Purpose, RawTimes, TownContext, TownTable, TravelTimeTable, TripRecord
from .featurize import FeatureSchema
from .runtime import derive_seed

TOWN_STATS = ("population", "poi", "companies", "dwellings")
NUMERIC_ATTRS = ("age", "flex", "shift")
CATEGORICAL_ATTRS = ("gender", "occupation", "part_time", "mode", "day", "sector")
DAYS = ("mon", "tue", "wed", "thu", "fri")
SIGNALS = ("archetype", "noise", "relevance")


@dataclass(frozen=True)
class Archetype:
    name: str
    share: float
    occupation: str | None  # None: drawn from OCCUPATIONS
    part_time: bool
    arrive: float  # mean arrival clock minute
    stay: float  # minutes at the destination
    travel_mult: float
    age: tuple[int, int]


WORK_ARCHETYPES = (
    Archetype("manual", 0.3, "manual", False, 427.5, 510.0, 1.0, (20, 62)),
    Archetype("office", 0.3, "office", False, 517.5, 540.0, 1.1, (22, 65)),
    Archetype("executive", 0.2, "executive", False, 577.5, 600.0, 1.25, (28, 65)),
    Archetype("part_time", 0.2, None, True, 817.5, 240.0, 0.9, (20, 65)),
)
STUDY_ARCHETYPES = (
    Archetype("primary", 0.35, "primary", False, 502.5, 480.0, 1.0, (6, 11)),
    Archetype("secondary", 0.4, "secondary", False, 472.5, 525.0, 1.1, (11, 18)),
    Archetype("university", 0.25, "university", True, 607.5, 390.0, 1.3, (18, 26)),
)
OCCUPATIONS = {Purpose.WORK: ("executive", "manual", "office"), Purpose.STUDY: ("primary", "secondary", "university")}


@dataclass(frozen=True)
class WorldParams:
    n_towns: int = 8
    n_persons: int = 2000
    n_census: int = 500
    purpose: Purpose = Purpose.WORK
    archetypes: tuple[Archetype, ...] | None = None  # None: default set for the purpose
    rho: float = 0.0
    sigma_minutes: float = 5.0
    signal: str = "archetype"
    xor_minutes: float = 0.0
    n_sectors: int = 10
    n_surveys: int = 1
    inverted_survey: int | None = None  # survey whose arrival schedule is reversed
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "purpose", Purpose(self.purpose))
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.sigma_minutes < 0:
            raise ValueError("sigma_minutes must be >= 0")
        if min(self.n_towns, self.n_persons, self.n_census, self.n_surveys, self.n_sectors) < 1:
            raise ValueError("counts must be >= 1")
        if self.signal not in SIGNALS:
            raise ValueError(f"signal must be one of {SIGNALS}")
        if self.inverted_survey is not None and not 0 <= self.inverted_survey < self.n_surveys:
            raise ValueError("inverted_survey must index an existing survey")

    @property
    def archetype_set(self) -> tuple[Archetype, ...]:
        if self.archetypes is not None:
            return self.archetypes
        return WORK_ARCHETYPES if self.purpose is Purpose.WORK else STUDY_ARCHETYPES


@dataclass(frozen=True)
class PlantedTruth:
    """Generating quantities per surveyed person, in trip order."""

    archetype: np.ndarray  # archetype index
    latent: np.ndarray  # per-person shared latent (the sector effect)
    sector_effect: np.ndarray
    xor: np.ndarray  # 0/1 XOR indicator
    arrive_mean: np.ndarray  # noiseless arrival minute (before wrapping)
    raw_times: np.ndarray  # (n, 4) generated minutes


@dataclass(frozen=True)
class World:
    params: WorldParams
    towns: TownTable
    travel_times: TravelTimeTable
    trips: tuple[TripRecord, ...]
    census: tuple[CensusRecord, ...]
    truth: PlantedTruth
    schema: FeatureSchema = field(default_factory=lambda: world_schema())


def world_schema() -> FeatureSchema:
    return FeatureSchema.build(TOWN_STATS, NUMERIC_ATTRS, CATEGORICAL_ATTRS)


def _towns(p: WorldParams, rng: np.random.Generator):
    coords = rng.uniform(0.0, 30.0, size=(p.n_towns, 2))
    towns = []
    for i in range(p.n_towns):
        pop = float(np.round(np.exp(rng.normal(8.5, 1.0))))
        stats = {
            "population": pop,
            "poi": float(np.round(pop * rng.uniform(0.01, 0.03), 1)),
            "companies": float(np.round(pop * rng.uniform(0.02, 0.05), 1)),
            "dwellings": float(np.round(pop * rng.uniform(0.4, 0.5), 1)),
        }
        towns.append(TownContext(f"T{i:03d}", stats))
    ids = [t.town_id for t in towns]
    tt = TravelTimeTable()
    dist = np.sqrt(((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2))
    np.fill_diagonal(dist, 2.0)
    for i, o in enumerate(ids):
        for j, d in enumerate(ids):
            road = (4.0 + 1.5 * dist[i, j]) * rng.uniform(0.9, 1.1)
            transit = (10.0 + 2.5 * dist[i, j]) * rng.uniform(0.9, 1.1)
            tt.add(o, d, Mode.ROAD, round(float(road), 1))
            tt.add(o, d, Mode.TRANSIT, round(float(transit), 1))
    return TownTable(towns), tt, ids, dist


def _persons(p: WorldParams, n: int, rng: np.random.Generator, ids, dist):
    arch = p.archetype_set
    shares = np.array([a.share for a in arch])
    a_idx = rng.choice(len(arch), size=n, p=shares / shares.sum())
    home = rng.integers(0, len(ids), size=n)
    # destinations decay with distance from home
    pref = np.exp(-dist / 12.0)
    pref /= pref.sum(axis=1, keepdims=True)
    dest = np.array([rng.choice(len(ids), p=pref[h]) for h in home])
    occupations = OCCUPATIONS[p.purpose]
    attrs = []
    for k in range(n):
        a = arch[a_idx[k]]
        lo, hi = a.age
        attrs.append(
            {
                "age": float(rng.integers(lo, hi + 1)),
                "flex": round(float(rng.uniform(-1.0, 1.0)), 4),
                "shift": round(float(rng.uniform(-1.0, 1.0)), 4),
                "gender": str(rng.choice(["F", "M"])),
                "occupation": a.occupation if a.occupation is not None else str(rng.choice(occupations)),
                "part_time": "yes" if a.part_time else "no",
                "mode": "car" if rng.random() < 0.6 else "transit",
                "day": str(rng.choice(DAYS)),
                "sector": f"K{rng.integers(0, p.n_sectors):03d}",
            }
        )
    return a_idx, home, dest, attrs


def _times(p: WorldParams, rng, a_idx, home, dest, attrs, ids, tt, surveys, sector_effect):
    n = len(a_idx)
    arch = p.archetype_set
    sigma = p.sigma_minutes
    flex = np.array([a["flex"] for a in attrs])
    shift = np.array([a["shift"] for a in attrs])
    latent = sector_effect[[int(a["sector"][1:]) for a in attrs]]
    xor = ((flex > 0) != (shift > 0)).astype(float)
    eps = rng.normal(size=(n, 4))

    if p.signal == "noise":
        arrive = rng.normal(510.0, 40.0, size=n)
        t_out = np.abs(rng.normal(30.0, 15.0, size=n))
        t_back = np.abs(rng.normal(30.0, 15.0, size=n))
        stay = rng.normal(540.0, 60.0, size=n)
        arrive_mean = np.full(n, 510.0)
    elif p.signal == "relevance":
        # only age drives the schedule; only the road time drives the durations
        age = np.array([a["age"] for a in attrs])
        lo = min(a.age[0] for a in arch)
        arrive_mean = 360.0 + 6.0 * (age - lo)
        arrive = arrive_mean + sigma * eps[:, 0]
        road_out = np.array([tt.lookup(ids[h], ids[d], Mode.ROAD) for h, d in zip(home, dest)])
        road_back = np.array([tt.lookup(ids[d], ids[h], Mode.ROAD) for h, d in zip(home, dest)])
        t_out = road_out + sigma * eps[:, 1]
        t_back = road_back + sigma * eps[:, 2]
        stay = np.full(n, 480.0)
    else:
        order = np.arange(len(arch))
        means = np.array([a.arrive for a in arch])
        inverted = np.array([p.inverted_survey is not None and s == p.inverted_survey for s in surveys])
        arrive_mean = np.where(inverted, means[order[::-1]][a_idx], means[a_idx])
        arrive_mean = arrive_mean + p.rho * 90.0 * latent + p.xor_minutes * xor
        arrive = arrive_mean + sigma * eps[:, 0]
        mult = np.array([a.travel_mult for a in arch])[a_idx] * (1.0 + 0.3 * p.rho * latent)
        modes = [Mode.ROAD if a["mode"] == "car" else Mode.TRANSIT for a in attrs]
        base_out = np.array([tt.lookup(ids[h], ids[d], m) for h, d, m in zip(home, dest, modes)])
        base_back = np.array([tt.lookup(ids[d], ids[h], m) for h, d, m in zip(home, dest, modes)])
        t_out = base_out * mult + 0.5 * p.xor_minutes * xor + sigma * eps[:, 1]
        t_back = base_back * mult + 0.5 * p.xor_minutes * xor + sigma * eps[:, 2]
        stay = np.array([a.stay for a in arch])[a_idx] + p.rho * 60.0 * latent

    t_out = np.maximum(t_out, 0.0)
    t_back = np.maximum(t_back, 0.0)
    arrive_home = arrive + stay + t_back
    raw = np.round(np.column_stack([t_out, np.mod(arrive, 1440.0), t_back, np.mod(arrive_home, 1440.0)]), 2)
    raw[:, [1, 3]] %= 1440.0  # rounding can land exactly on midnight
    return raw, latent, xor, arrive_mean


def generate(params: WorldParams) -> World:
    """Build a world; the same params always give the same world."""
    p = params
    town_rng = np.random.default_rng(derive_seed(p.seed, "towns"))
    towns, tt, ids, dist = _towns(p, town_rng)

    sector_effect = np.random.default_rng(derive_seed(p.seed, "sectors")).uniform(-1.0, 1.0, size=p.n_sectors)
    rng = np.random.default_rng(derive_seed(p.seed, "persons"))
    a_idx, home, dest, attrs = _persons(p, p.n_persons, rng, ids, dist)
    surveys = rng.integers(0, p.n_surveys, size=p.n_persons)
    weights = np.round(rng.uniform(0.5, 2.0, size=p.n_persons), 3)
    raw, latent, xor, arrive_mean = _times(p, rng, a_idx, home, dest, attrs, ids, tt, surveys, sector_effect)

    trips = tuple(
        TripRecord(
            person_id=f"P{k:06d}",
            survey_id=f"S{surveys[k]}",
            origin_town=ids[home[k]],
            dest_town=ids[dest[k]],
            purpose=p.purpose,
            person_attrs=attrs[k],
            weight=float(weights[k]),
            times=RawTimes(*(float(v) for v in raw[k])),
        )
        for k in range(p.n_persons)
    )

    crng = np.random.default_rng(derive_seed(p.seed, "census"))
    _, c_home, c_dest, c_attrs = _persons(p, p.n_census, crng, ids, dist)
    c_weights = np.round(crng.uniform(1.0, 5.0, size=p.n_census), 3)
    census = tuple(
        CensusRecord(f"C{k:06d}", ids[c_home[k]], ids[c_dest[k]], p.purpose, c_attrs[k], float(c_weights[k]))
        for k in range(p.n_census)
    )
    truth = PlantedTruth(a_idx, latent, sector_effect, xor, arrive_mean, raw)
    return World(p, towns, tt, trips, census, truth)


FIXTURES = ("easy", "noise", "shared-latent", "iid-cities", "adversarial-city", "xor", "relevance")


def fixture(name: str, n: int | None = None, seed: int = 0, **overrides) -> WorldParams:
    """Named parameter sets used throughout the test-suite and the CLI."""
    base = {
        "easy": WorldParams(n_towns=6, n_persons=5000, sigma_minutes=1.0),
        "noise": WorldParams(n_persons=2000, signal="noise"),
        "shared-latent": WorldParams(n_persons=3000, rho=0.8, sigma_minutes=3.0, n_sectors=400),
        "iid-cities": WorldParams(n_towns=6, n_persons=4000, sigma_minutes=1.0, n_surveys=4),
        "adversarial-city": WorldParams(n_towns=6, n_persons=4000, sigma_minutes=1.0, n_surveys=4, inverted_survey=3),
        "xor": WorldParams(n_towns=6, n_persons=2000, sigma_minutes=1.0, xor_minutes=120.0),
        "relevance": WorldParams(n_towns=20, n_persons=3000, sigma_minutes=2.0, signal="relevance"),
    }
    if name not in base:
        raise KeyError(f"unknown fixture {name!r}; choose from {FIXTURES}")
    params = replace(base[name], seed=seed, **overrides)
    if n is not None:
        params = replace(params, n_persons=n)
    return params
