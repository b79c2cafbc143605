"""Text file formats: trips, census, towns and travel-time CSVs, schema and model JSON.

Floats are written with ``repr`` (shortest round-trip form) and columns in a
fixed order, so write -> read -> write is byte-stable. Person attributes are
kept as strings on load; the schema decides which ones are numeric.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

from .domain import (
    CensusRecord,
    Mode,
    RawTimes,
    TownContext,
    TownTable,
    TravelTimeTable,
    TripRecord,
)
from .featurize import FeatureSchema, FittedEncoders
from .modelsel import FittedModel, TaskMode
from .net import Network

TRIP_FIELDS = ("person_id", "survey_id", "origin_town", "dest_town", "purpose", "weight")
TIME_FIELDS = ("travel_to_dest", "arrive_dest", "travel_to_home", "arrive_home")
CENSUS_FIELDS = ("person_id", "home_town", "dest_town", "purpose", "weight")
TT_FIELDS = ("origin", "destination", "mode", "minutes")
MODEL_FORMAT = "tripcast-model/1"


class ParseError(ValueError):
    """A malformed input file; the message names file, line, column and field."""

    def __init__(self, path, line: int, column: int, field: str, message: str):
        self.path, self.line, self.column, self.field = str(path), line, column, field
        super().__init__(f"{path}:{line}:{column}: field {field!r}: {message}")


def fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_rows(path, rows: Sequence[dict], header_lines: Sequence[str] = (), columns: Sequence[str] | None = None) -> None:
    """Write a list of dicts as a report CSV, with optional leading ``# `` lines."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        keys = list(columns) if columns is not None else list(rows[0]) if rows else []
        if not keys:
            return
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([fmt(r[k]) for k in keys])


class _Reader:
    """CSV reader that knows where it is, for error messages."""

    def __init__(self, path, required: Sequence[str], comments: bool = False):
        self.path = Path(path)
        if not self.path.exists():
            raise FileNotFoundError(f"{self.path}: no such file")
        self._fh = open(self.path, newline="", encoding="utf-8")
        self._offset = 0
        if comments:
            # report files start with "# key value" lines
            while True:
                pos = self._fh.tell()
                ln = self._fh.readline()
                if not ln.startswith("#"):
                    self._fh.seek(pos)
                    break
                self._offset += 1
        self._reader = csv.reader(self._fh)
        try:
            self.header = next(self._reader)
        except StopIteration:
            self._fh.close()
            raise ParseError(self.path, self._offset + 1, 1, "<header>", "file is empty") from None
        self.col = {name: i for i, name in enumerate(self.header)}
        if len(self.col) != len(self.header):
            raise ParseError(self.path, self._offset + 1, 1, "<header>", "duplicate column names")
        for name in required:
            if name not in self.col:
                raise ParseError(self.path, self._offset + 1, len(self.header) + 1, name, "required column is missing")
        self.line = self._offset + 1
        self.row: list[str] = []

    def __iter__(self):
        try:
            for row in self._reader:
                self.line = self._offset + self._reader.line_num
                if not row:
                    continue
                if len(row) != len(self.header):
                    raise ParseError(self.path, self.line, min(len(row), len(self.header)) + 1, "<row>",
                                     f"expected {len(self.header)} fields, got {len(row)}")
                self.row = row
                yield self
        finally:
            self._fh.close()

    def error(self, field: str, message: str) -> ParseError:
        return ParseError(self.path, self.line, self.col.get(field, 0) + 1, field, message)

    def text(self, field: str) -> str:
        value = self.row[self.col[field]]
        if value == "":
            raise self.error(field, "empty value")
        return value

    def number(self, field: str, nonneg: bool = False) -> float:
        raw = self.text(field)
        try:
            value = float(raw)
        except ValueError:
            raise self.error(field, f"{raw!r} is not a number") from None
        if not math.isfinite(value) or (nonneg and value < 0):
            raise self.error(field, f"{raw!r} must be finite{' and >= 0' if nonneg else ''}")
        return value

    def build(self, ctor, *args, field: str = "<row>", **kwargs):
        try:
            return ctor(*args, **kwargs)
        except (ValueError, TypeError) as exc:
            raise self.error(field, str(exc)) from None


def _attr_names(records) -> list[str]:
    names: set[str] = set()
    for r in records:
        names.update(r.person_attrs)
    return sorted(names)


# trips

def write_trips(path, trips: Sequence[TripRecord]) -> None:
    attrs = _attr_names(trips)
    clash = set(attrs) & set(TRIP_FIELDS + TIME_FIELDS)
    if clash:
        raise ValueError(f"person attributes clash with reserved columns: {sorted(clash)}")
    rows = (
        [t.person_id, t.survey_id, t.origin_town, t.dest_town, t.purpose.value, t.weight]
        + [t.person_attrs.get(a, "") for a in attrs]
        + [float(v) for v in (t.times.travel_to_dest, t.times.arrive_dest, t.times.travel_to_home, t.times.arrive_home)]
        for t in trips
    )
    _write_csv(path, list(TRIP_FIELDS) + attrs + list(TIME_FIELDS), rows)


def read_trips(path) -> list[TripRecord]:
    rd = _Reader(path, TRIP_FIELDS + TIME_FIELDS)
    attrs = [h for h in rd.header if h not in TRIP_FIELDS and h not in TIME_FIELDS]
    out = []
    for r in rd:
        times = RawTimes(*(r.number(f) for f in TIME_FIELDS))
        out.append(
            r.build(
                TripRecord,
                person_id=r.text("person_id"),
                survey_id=r.text("survey_id"),
                origin_town=r.text("origin_town"),
                dest_town=r.text("dest_town"),
                purpose=r.text("purpose"),
                person_attrs={a: r.row[r.col[a]] for a in attrs if r.row[r.col[a]] != ""},
                weight=r.number("weight", nonneg=True),
                times=times,
            )
        )
    return out


# census

def write_census(path, records: Sequence[CensusRecord]) -> None:
    attrs = _attr_names(records)
    rows = (
        [c.person_id, c.home_town, c.dest_town, c.purpose.value, c.weight] + [c.person_attrs.get(a, "") for a in attrs]
        for c in records
    )
    _write_csv(path, list(CENSUS_FIELDS) + attrs, rows)


def read_census(path) -> list[CensusRecord]:
    rd = _Reader(path, CENSUS_FIELDS)
    attrs = [h for h in rd.header if h not in CENSUS_FIELDS]
    out = []
    for r in rd:
        out.append(
            r.build(
                CensusRecord,
                person_id=r.text("person_id"),
                home_town=r.text("home_town"),
                dest_town=r.text("dest_town"),
                purpose=r.text("purpose"),
                person_attrs={a: r.row[r.col[a]] for a in attrs if r.row[r.col[a]] != ""},
                weight=r.number("weight", nonneg=True),
            )
        )
    return out


# towns and travel times

def write_towns(path, towns: TownTable) -> None:
    stats = list(towns.stat_names())
    _write_csv(path, ["town_id"] + stats, ([tid] + [towns[tid].stats[s] for s in stats] for tid in sorted(towns)))


def read_towns(path) -> TownTable:
    rd = _Reader(path, ("town_id",))
    stats = [h for h in rd.header if h != "town_id"]
    seen: set[str] = set()
    out = []
    for r in rd:
        tid = r.text("town_id")
        if tid in seen:
            raise r.error("town_id", f"town {tid!r} appears more than once")
        seen.add(tid)
        out.append(r.build(TownContext, tid, {s: r.number(s) for s in stats}))
    return TownTable(out)


def write_travel_times(path, tt: TravelTimeTable) -> None:
    _write_csv(path, TT_FIELDS, ([o, d, m.value, v] for (o, d, m), v in tt.items()))


def read_travel_times(path) -> TravelTimeTable:
    rd = _Reader(path, TT_FIELDS)
    tt = TravelTimeTable()
    for r in rd:
        mode = r.text("mode")
        if mode not in {m.value for m in Mode}:
            raise r.error("mode", f"unknown mode {mode!r}")
        key = (r.text("origin"), r.text("destination"), mode)
        if key in tt:
            raise r.error("origin", f"duplicate travel time for {key}")
        tt.add(*key, r.number("minutes", nonneg=True))
    return tt


# JSON documents

def dump_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_json(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{p}: no such file")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(p, exc.lineno, exc.colno, "<json>", exc.msg) from None


def write_schema(path, schema: FeatureSchema) -> None:
    dump_json(path, schema.to_dict())


def read_schema(path) -> FeatureSchema:
    doc = load_json(path)
    try:
        return FeatureSchema.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(path, 1, 1, "<schema>", str(exc)) from None


def model_to_dict(model: FittedModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "mode": model.mode.value,
        "tasks": list(model.tasks),
        "schema": model.encoders.schema.to_dict(),
        "encoders": model.encoders.to_dict(),
        "nets": [n.to_dict() for n in model.nets],
    }


def model_from_dict(doc: dict) -> FittedModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a model document (format {doc.get('format')!r})")
    schema = FeatureSchema.from_dict(doc["schema"])
    enc = FittedEncoders.from_dict(schema, doc["encoders"])
    nets = [Network.from_dict(n) for n in doc["nets"]]
    return FittedModel(enc, nets, tuple(doc["tasks"]), TaskMode(doc["mode"]))


def write_model(path, model: FittedModel) -> None:
    dump_json(path, model_to_dict(model))


def read_model(path) -> FittedModel:
    doc = load_json(path)
    try:
        return model_from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(path, 1, 1, "<model>", str(exc)) from None
