"""Predictor assembly and encoding.

A raw row is built from four blocks, always in this order:

    HA     statistics of the home town
    WA_SA  statistics of the work or study town
    ATT    theoretical travel times, both directions and both modes
    PA     person attributes

Numeric features are z-scored and categorical ones one-hot encoded with an
extra bucket for levels unseen at fit time. Encoders are fitted on training
rows only; callers doing cross-validation fit one per fold.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .domain import N_SLOTS, N_TASKS, CensusRecord, Mode, Purpose, TownTable, TravelTimeTable, TripRecord

UNKNOWN = "<unknown>"


class FeatureCategory(str, Enum):
    HA = "HA"
    WA_SA = "WA_SA"
    ATT = "ATT"
    PA = "PA"


CATEGORY_ORDER = (FeatureCategory.HA, FeatureCategory.WA_SA, FeatureCategory.ATT, FeatureCategory.PA)

# ATT sources: (mode, outbound?) where outbound means home -> destination.
ATT_SOURCES = {
    "road_out": (Mode.ROAD, True),
    "transit_out": (Mode.TRANSIT, True),
    "road_back": (Mode.ROAD, False),
    "transit_back": (Mode.TRANSIT, False),
}


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class Feature:
    name: str
    category: FeatureCategory
    kind: str  # "numeric" | "categorical"
    source: str
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "category", FeatureCategory(self.category))
        if self.kind not in ("numeric", "categorical"):
            raise SchemaError(f"feature {self.name}: kind must be numeric or categorical, got {self.kind!r}")
        if self.category is FeatureCategory.ATT:
            if self.source not in ATT_SOURCES:
                raise SchemaError(f"feature {self.name}: ATT source must be one of {sorted(ATT_SOURCES)}")
            if self.kind != "numeric":
                raise SchemaError(f"feature {self.name}: travel times are numeric")
        if self.kind == "numeric" and self.levels:
            raise SchemaError(f"feature {self.name}: numeric features take no levels")
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))

    @property
    def numeric(self) -> bool:
        return self.kind == "numeric"


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered predictor list. Features are kept grouped by category block."""

    features: tuple[Feature, ...]

    def __post_init__(self):
        feats = tuple(self.features)
        names = [f.name for f in feats]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise SchemaError(f"duplicate feature names: {dupes}")
        # stable sort into block order, keeping the listed order inside each block
        rank = {c: i for i, c in enumerate(CATEGORY_ORDER)}
        feats = tuple(sorted(feats, key=lambda f: rank[f.category]))
        object.__setattr__(self, "features", feats)

    @classmethod
    def build(
        cls,
        town_stats: Sequence[str],
        numeric_attrs: Sequence[str] = (),
        categorical_attrs: Sequence[str] | dict[str, Sequence[str]] = (),
    ) -> "FeatureSchema":
        feats = [Feature(f"home_{s}", FeatureCategory.HA, "numeric", s) for s in town_stats]
        feats += [Feature(f"dest_{s}", FeatureCategory.WA_SA, "numeric", s) for s in town_stats]
        feats += [Feature(f"tt_{s}", FeatureCategory.ATT, "numeric", s) for s in ATT_SOURCES]
        feats += [Feature(a, FeatureCategory.PA, "numeric", a) for a in numeric_attrs]
        if isinstance(categorical_attrs, dict):
            feats += [Feature(a, FeatureCategory.PA, "categorical", a, tuple(lv)) for a, lv in categorical_attrs.items()]
        else:
            feats += [Feature(a, FeatureCategory.PA, "categorical", a) for a in categorical_attrs]
        return cls(tuple(feats))

    def __len__(self):
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_dict(self) -> dict:
        out = []
        for f in self.features:
            d = {"name": f.name, "category": f.category.value, "kind": f.kind, "source": f.source}
            if f.levels:
                d["levels"] = list(f.levels)
            out.append(d)
        return {"features": out}

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureSchema":
        if not isinstance(doc, dict) or set(doc) != {"features"}:
            raise SchemaError("schema document must be an object with a single 'features' list")
        feats = []
        for i, item in enumerate(doc["features"]):
            unknown = set(item) - {"name", "category", "kind", "source", "levels"}
            if unknown:
                raise SchemaError(f"feature #{i}: unknown keys {sorted(unknown)}")
            try:
                category = FeatureCategory(item["category"])
                source = item.get("source", item["name"] if category is FeatureCategory.PA else None)
                if source is None:
                    raise SchemaError(f"feature #{i} ({item['name']}): 'source' is required for {category.value}")
                feats.append(Feature(item["name"], category, item["kind"], source, tuple(item.get("levels", ()))))
            except KeyError as exc:
                raise SchemaError(f"feature #{i}: missing key {exc}") from None
            except ValueError as exc:
                if isinstance(exc, SchemaError):
                    raise
                raise SchemaError(f"feature #{i}: {exc}") from None
        return cls(tuple(feats))

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _person_value(feature: Feature, attrs, who: str):
    try:
        value = attrs[feature.source]
    except KeyError:
        raise KeyError(f"{who}: missing person attribute {feature.source!r}") from None
    if feature.numeric:
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ValueError(f"{who}: attribute {feature.source!r} = {value!r} is not numeric") from None
    return str(value)


def assemble_parts(schema, home: str, dest: str, attrs, towns: TownTable, tt: TravelTimeTable, who: str) -> list:
    home_ctx = towns[home]
    dest_ctx = towns[dest]
    row = []
    for f in schema.features:
        if f.category is FeatureCategory.HA:
            row.append(float(_stat(home_ctx, f.source)))
        elif f.category is FeatureCategory.WA_SA:
            row.append(float(_stat(dest_ctx, f.source)))
        elif f.category is FeatureCategory.ATT:
            mode, outbound = ATT_SOURCES[f.source]
            o, d = (home, dest) if outbound else (dest, home)
            row.append(tt.lookup(o, d, mode))
        else:
            row.append(_person_value(f, attrs, who))
    return row


def _stat(ctx, name):
    try:
        return ctx.stats[name]
    except KeyError:
        raise KeyError(f"town {ctx.town_id!r} has no statistic {name!r}") from None


def assemble(trip: TripRecord, towns: TownTable, tt: TravelTimeTable, schema: FeatureSchema) -> list:
    """Raw feature row for one trip, in schema order."""
    return assemble_parts(schema, trip.origin_town, trip.dest_town, trip.person_attrs, towns, tt, f"trip {trip.person_id}")


@dataclass(frozen=True)
class TripTable:
    """Raw (unencoded) predictors as columns, with targets and bookkeeping.

    Numeric columns are float arrays, categorical ones object arrays of str.
    ``Y`` is None for census tables.
    """

    schema: FeatureSchema
    columns: tuple[np.ndarray, ...]
    Y: np.ndarray | None
    weights: np.ndarray
    groups: np.ndarray
    row_ids: np.ndarray
    purpose: Purpose = Purpose.WORK
    keys: tuple[tuple[str, str], ...] = field(default=(), compare=False)

    def __post_init__(self):
        n = len(self.weights)
        if len(self.columns) != len(self.schema):
            raise SchemaError("column count does not match schema")
        for f, col in zip(self.schema.features, self.columns):
            if len(col) != n:
                raise ValueError(f"column {f.name} has {len(col)} rows, expected {n}")
        if self.Y is not None:
            if self.Y.shape != (n, N_TASKS):
                raise ValueError(f"targets must be ({n}, {N_TASKS}), got {self.Y.shape}")
            if self.Y.size and (self.Y.min() < 0 or self.Y.max() >= N_SLOTS):
                raise ValueError("target slots outside [0, 96)")
        if len(self.groups) != n or len(self.row_ids) != n:
            raise ValueError("groups / row_ids length mismatch")

    def __len__(self):
        return len(self.weights)

    def subset(self, idx) -> "TripTable":
        idx = np.asarray(idx)
        return TripTable(
            self.schema,
            tuple(c[idx] for c in self.columns),
            None if self.Y is None else self.Y[idx],
            self.weights[idx],
            self.groups[idx],
            self.row_ids[idx],
            self.purpose,
            tuple(self.keys[i] for i in idx) if self.keys else (),
        )

    def with_targets(self, Y: np.ndarray) -> "TripTable":
        return TripTable(self.schema, self.columns, np.asarray(Y), self.weights, self.groups, self.row_ids, self.purpose, self.keys)

    def column(self, name: str) -> np.ndarray:
        return self.columns[self.schema.index(name)]


def _columns_from_rows(schema: FeatureSchema, rows: list[list]) -> tuple[np.ndarray, ...]:
    cols = []
    for j, f in enumerate(schema.features):
        values = [r[j] for r in rows]
        cols.append(np.array(values, dtype=float) if f.numeric else np.array(values, dtype=object))
    return tuple(cols)


def build_table(
    trips: Iterable[TripRecord],
    towns: TownTable,
    tt: TravelTimeTable,
    schema: FeatureSchema,
    purpose: Purpose | str | None = None,
) -> TripTable:
    """Assemble the raw table for all trips of one purpose (all trips if None)."""
    trips = [t for t in trips if purpose is None or t.purpose is Purpose(purpose)]
    if not trips:
        raise ValueError("no trips to assemble")
    rows = [assemble(t, towns, tt, schema) for t in trips]
    return TripTable(
        schema,
        _columns_from_rows(schema, rows),
        np.array([t.targets.as_tuple() for t in trips], dtype=np.int64),
        np.array([t.weight for t in trips], dtype=float),
        np.array([t.survey_id for t in trips], dtype=object),
        np.arange(len(trips)),
        Purpose(purpose) if purpose is not None else trips[0].purpose,
        tuple((t.origin_town, t.dest_town) for t in trips),
    )


def build_census_table(records: Sequence[CensusRecord], towns, tt, schema) -> tuple[TripTable, list[tuple[int, str]]]:
    """Raw table for census records; records that fail lookup are returned as rejects."""
    rows, kept, kept_idx, rejects = [], [], [], []
    for i, rec in enumerate(records):
        try:
            rows.append(assemble_parts(schema, rec.home_town, rec.dest_town, rec.person_attrs, towns, tt, f"census {rec.person_id}"))
            kept.append(rec)
            kept_idx.append(i)
        except (KeyError, ValueError) as exc:
            rejects.append((i, str(exc).strip("'\"")))
    if not kept:
        raise ValueError("every census record was rejected")
    table = TripTable(
        schema,
        _columns_from_rows(schema, rows),
        None,
        np.array([r.weight for r in kept], dtype=float),
        np.array(["census"] * len(kept), dtype=object),
        np.array(kept_idx),
        kept[0].purpose,
        tuple((r.home_town, r.dest_town) for r in kept),
    )
    return table, rejects


@dataclass(frozen=True)
class FittedEncoders:
    schema: FeatureSchema
    means: dict[str, float]
    stds: dict[str, float]
    levels: dict[str, tuple[str, ...]]
    dropped: tuple[str, ...]

    @property
    def column_names(self) -> tuple[str, ...]:
        names = []
        for f in self.schema.features:
            if f.name in self.dropped:
                continue
            if f.numeric:
                names.append(f.name)
            else:
                names.extend(f"{f.name}={lv}" for lv in self.levels[f.name])
                names.append(f"{f.name}={UNKNOWN}")
        return tuple(names)

    @property
    def column_features(self) -> tuple[int, ...]:
        """Schema index of the feature behind each encoded column."""
        owners = []
        for j, f in enumerate(self.schema.features):
            if f.name in self.dropped:
                continue
            owners.extend([j] * (1 if f.numeric else len(self.levels[f.name]) + 1))
        return tuple(owners)

    @property
    def width(self) -> int:
        return len(self.column_features)

    def to_dict(self) -> dict:
        return {
            "schema_fingerprint": self.schema.fingerprint(),
            "means": self.means,
            "stds": self.stds,
            "levels": {k: list(v) for k, v in self.levels.items()},
            "dropped": list(self.dropped),
        }

    @classmethod
    def from_dict(cls, schema: FeatureSchema, doc: dict) -> "FittedEncoders":
        if doc["schema_fingerprint"] != schema.fingerprint():
            raise SchemaError("encoders were fitted on a different schema")
        return cls(
            schema,
            {k: float(v) for k, v in doc["means"].items()},
            {k: float(v) for k, v in doc["stds"].items()},
            {k: tuple(v) for k, v in doc["levels"].items()},
            tuple(doc["dropped"]),
        )


def fit(schema: FeatureSchema, table: TripTable) -> FittedEncoders:
    """Z-score parameters and level maps from the given (training) rows only."""
    if len(table) < 2:
        raise ValueError(f"need at least 2 training rows to fit encoders, got {len(table)}")
    means, stds, levels, dropped = {}, {}, {}, []
    for f, col in zip(schema.features, table.columns):
        if f.numeric:
            mu = float(np.mean(col))
            sd = float(np.std(col))
            if not sd > 0.0 or not np.isfinite(sd):
                dropped.append(f.name)
                continue
            means[f.name], stds[f.name] = mu, sd
        else:
            levels[f.name] = tuple(sorted(set(col.tolist()) | set(f.levels)))
    return FittedEncoders(schema, means, stds, levels, tuple(dropped))


def transform(table: TripTable, enc: FittedEncoders) -> np.ndarray:
    n = len(table)
    blocks = []
    for f, col in zip(enc.schema.features, table.columns):
        if f.name in enc.dropped:
            continue
        if f.numeric:
            blocks.append(((col - enc.means[f.name]) / enc.stds[f.name])[:, None])
        else:
            lv = enc.levels[f.name]
            pos = {v: i for i, v in enumerate(lv)}
            hot = np.zeros((n, len(lv) + 1))
            hot[np.arange(n), [pos.get(v, len(lv)) for v in col]] = 1.0
            blocks.append(hot)
    X = np.hstack(blocks) if blocks else np.zeros((n, 0))
    if not np.all(np.isfinite(X)):
        raise ValueError("encoded predictors contain NaN or Inf")
    return X


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray | None
    weights: np.ndarray
    groups: np.ndarray
    encoders: FittedEncoders
    purpose: Purpose = Purpose.WORK

    def __post_init__(self):
        n = self.X.shape[0]
        if len(self.weights) != n or len(self.groups) != n or (self.Y is not None and len(self.Y) != n):
            raise ValueError("row counts of X, Y, weights and groups disagree")

    def __len__(self):
        return self.X.shape[0]

    @property
    def schema(self) -> FeatureSchema:
        return self.encoders.schema


def encode(table: TripTable, enc: FittedEncoders) -> Dataset:
    return Dataset(transform(table, enc), table.Y, table.weights, table.groups, enc, table.purpose)
