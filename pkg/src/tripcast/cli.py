"""Command-line entry point: ``tripcast <command> [options]``.

Every command reads a flat configuration (an optional JSON file, then
``TRIPCAST_*`` environment variables for paths, then command-line flags),
validates it, and writes reports that carry the configuration fingerprint and
the master seed. Exit codes: 0 success, 2 validation error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import disagg, featurize, io, linear, modelsel, synthgen
from .domain import TASK_NAMES, DomainError
from .net import DROPOUT_RATES, FAMILIES, ArchitectureSpec, TrainConfig, full_grid
from .runtime import derive_seed

COMMANDS = ("synth", "train", "nested-cv", "compare-modes", "permtest", "portability", "disagg", "features", "correlate")
PATH_FIELDS = ("trips", "towns", "travel_times", "feature_schema", "census", "model", "cv_report", "profiles_a", "profiles_b", "out")
# fields that do not change results and so stay out of the fingerprint
UNSCORED_FIELDS = ("threads", "out")

ARRIVE_DEST, ARRIVE_HOME = 1, 3  # indices into TASK_NAMES

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    command: Literal[COMMANDS]  # type: ignore[valid-type]
    seed: int = Field(0, ge=0)
    threads: int = Field(1, ge=1)

    # paths
    trips: Optional[str] = None
    towns: Optional[str] = None
    travel_times: Optional[str] = None
    feature_schema: Optional[str] = None
    census: Optional[str] = None
    model: Optional[str] = None
    cv_report: Optional[str] = None
    profiles_a: Optional[str] = None
    profiles_b: Optional[str] = None
    out: Optional[str] = None

    # synth
    fixture: str = "easy"
    n_persons: Optional[int] = Field(None, ge=1)
    n_census: Optional[int] = Field(None, ge=1)

    # model selection
    outer_k: int = Field(10, ge=2)
    inner_k: int = Field(9, ge=2)
    families: list[str] = list(FAMILIES)
    min_depth: int = Field(2, ge=1)
    max_depth: int = Field(10, ge=1)
    dropouts: list[float] = list(DROPOUT_RATES)
    task_mode: Literal["multi_task", "single_task"] = "multi_task"
    tasks: list[str] = list(TASK_NAMES)
    n_perm: int = Field(100, ge=1)
    misclassified_only: bool = True

    # fixed architecture for train / permtest / compare-modes
    family: str = "pyramidal"
    n_hidden: int = Field(2, ge=1)
    dropout: float = Field(0.0, ge=0.0, lt=1.0)

    # training
    max_epochs: int = Field(500, ge=1)
    patience: int = Field(10, ge=1)
    batch_size: int = Field(128, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    init: Literal["he", "glorot"] = "he"
    precision: Literal["float32", "float64"] = "float32"

    # disaggregation
    bandwidth: Optional[float] = Field(None, gt=0.0)
    disagg_mode: Literal["expected", "sample"] = "expected"

    # linear relevance
    lam: float = Field(1e-3, ge=0.0)
    linear_epochs: int = Field(30, ge=1)
    aggregate: Literal["sum", "max", "l2"] = "sum"

    @field_validator("families")
    @classmethod
    def _families(cls, v):
        bad = [f for f in v if f not in FAMILIES]
        if bad or not v:
            raise ValueError(f"families must be a non-empty subset of {FAMILIES}")
        return v

    @field_validator("dropouts")
    @classmethod
    def _dropouts(cls, v):
        if not v or any(not 0.0 <= d < 1.0 for d in v):
            raise ValueError("dropouts must be non-empty and in [0, 1)")
        return v

    @field_validator("tasks")
    @classmethod
    def _tasks(cls, v):
        if not v or any(t not in TASK_NAMES for t in v) or len(set(v)) != len(v):
            raise ValueError(f"tasks must be distinct names from {TASK_NAMES}")
        return v

    @field_validator("family")
    @classmethod
    def _family(cls, v):
        if v not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        return v

    @field_validator("fixture")
    @classmethod
    def _fixture(cls, v):
        if v not in synthgen.FIXTURES:
            raise ValueError(f"fixture must be one of {synthgen.FIXTURES}")
        return v

    def fingerprint(self) -> str:
        doc = self.model_dump(exclude=set(UNSCORED_FIELDS))
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    @property
    def task_indices(self) -> tuple[int, ...]:
        return tuple(sorted(TASK_NAMES.index(t) for t in self.tasks))

    def grid(self) -> list[ArchitectureSpec]:
        if self.min_depth > self.max_depth:
            raise ValueError("min_depth exceeds max_depth")
        return full_grid(range(self.min_depth, self.max_depth + 1), tuple(self.families), tuple(self.dropouts))

    def spec(self) -> ArchitectureSpec:
        return ArchitectureSpec(self.family, self.n_hidden, self.dropout)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.seed,
            init=self.init,
            precision=self.precision,
        )

    def cv_config(self) -> modelsel.CvConfig:
        return modelsel.CvConfig(
            outer_k=self.outer_k,
            inner_k=self.inner_k,
            seed=self.seed,
            train=self.train_config(),
            tasks=self.task_indices,
            misclassified_only=self.misclassified_only,
            threads=self.threads,
        )


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------- helpers

def _need(cfg: RunConfig, *names: str) -> list[str]:
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise UsageError(f"{cfg.command}: missing required path(s): {', '.join(missing)}")
    for n in names:
        if n != "out" and not Path(getattr(cfg, n)).exists():
            raise UsageError(f"{cfg.command}: {n} file {getattr(cfg, n)} does not exist")
    return [getattr(cfg, n) for n in names]


def _header(cfg: RunConfig) -> list[str]:
    return [f"command {cfg.command}", f"config {cfg.fingerprint()}", f"seed {cfg.seed}"]


def _write_json_report(cfg: RunConfig, path, body: dict) -> None:
    io.dump_json(path, {"command": cfg.command, "config_fingerprint": cfg.fingerprint(), "seed": cfg.seed, **body})


def _write_csv_report(cfg: RunConfig, path, rows, columns=None) -> None:
    io.write_rows(path, list(rows), _header(cfg), columns)


def _load_table(cfg: RunConfig) -> featurize.TripTable:
    trips_p, towns_p, tt_p, schema_p = _need(cfg, "trips", "towns", "travel_times", "feature_schema")
    schema = io.read_schema(schema_p)
    return featurize.build_table(io.read_trips(trips_p), io.read_towns(towns_p), io.read_travel_times(tt_p), schema)


def _out(cfg: RunConfig) -> Path:
    (out,) = _need(cfg, "out")
    p = Path(out)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _task_names(tasks) -> list[str]:
    return [TASK_NAMES[t] for t in tasks]


# ---------------------------------------------------------------- commands

def cmd_synth(cfg: RunConfig) -> None:
    out = Path(_need(cfg, "out")[0])
    out.mkdir(parents=True, exist_ok=True)
    overrides = {} if cfg.n_census is None else {"n_census": cfg.n_census}
    world = synthgen.generate(synthgen.fixture(cfg.fixture, n=cfg.n_persons, seed=cfg.seed, **overrides))
    io.write_trips(out / "trips.csv", world.trips)
    io.write_census(out / "census.csv", world.census)
    io.write_towns(out / "towns.csv", world.towns)
    io.write_travel_times(out / "travel_times.csv", world.travel_times)
    io.write_schema(out / "schema.json", world.schema)
    _write_json_report(cfg, out / "synth.json", {"fixture": cfg.fixture, "params": _params_doc(world.params)})


def _params_doc(p: synthgen.WorldParams) -> dict:
    doc = {}
    for k, v in vars(p).items():
        if k == "archetypes":
            doc[k] = None if v is None else [a.name for a in v]
        elif hasattr(v, "value"):
            doc[k] = v.value
        else:
            doc[k] = v
    return doc


def cmd_train(cfg: RunConfig) -> None:
    table = _load_table(cfg)
    out = _out(cfg)
    ccfg = cfg.cv_config()
    model = modelsel.fit_model(table, np.arange(len(table)), cfg.spec(), ccfg, derive_seed(cfg.seed, "train"), cfg.task_mode)
    io.write_model(out, model)
    fit = modelsel.score_model(model, table, np.arange(len(table)), ccfg)
    _write_json_report(
        cfg,
        out.with_suffix(".report.json"),
        {
            "spec": [n.spec.to_dict() for n in model.nets],
            "tasks": _task_names(model.tasks),
            "train_f1": fit.f1.tolist(),
            "train_minute_error": fit.minute_error.tolist(),
        },
    )


def cmd_nested_cv(cfg: RunConfig) -> None:
    table = _load_table(cfg)
    out = _out(cfg)
    res = modelsel.nested_cv(table, cfg.grid(), cfg.cv_config(), cfg.task_mode)
    _write_json_report(cfg, out, {"task_names": _task_names(res.tasks), **res.to_dict()})


def cmd_compare_modes(cfg: RunConfig) -> None:
    table = _load_table(cfg)
    out = _out(cfg)
    structures = [ArchitectureSpec(f, d, cfg.dropout) for f in cfg.families for d in range(cfg.min_depth, cfg.max_depth + 1)]
    cmp = modelsel.compare_modes(table, structures, cfg.cv_config())
    rows = [{**r, "task": TASK_NAMES[r["task"]]} for r in cmp.rows()]
    _write_csv_report(cfg, out, rows)


def cmd_permtest(cfg: RunConfig) -> None:
    table = _load_table(cfg)
    out = _out(cfg)
    res = modelsel.permutation_test(table, cfg.spec(), cfg.cv_config(), cfg.n_perm)
    _write_json_report(
        cfg,
        out,
        {
            "spec": cfg.spec().label,
            "tasks": _task_names(res.tasks),
            "n_perm": res.n_perm,
            "observed": res.observed.tolist(),
            "pvalues": res.pvalues.tolist(),
            "pvalue_mean": res.pvalue_mean,
            "null": res.null.tolist(),
        },
    )


def cmd_portability(cfg: RunConfig) -> None:
    table = _load_table(cfg)
    out = _out(cfg)
    if len(set(table.groups.tolist())) < 2:
        raise UsageError("portability needs trips from at least two surveys (survey_id)")
    rep = modelsel.leave_one_group_out(table, cfg.grid(), cfg.cv_config())
    rows = []
    for r in rep.rows:
        for j, t in enumerate(rep.tasks):
            rows.append(
                {
                    "held_out": r.group,
                    "n_rows": r.n_rows,
                    "spec": r.spec.label,
                    "task": TASK_NAMES[t],
                    "reference_f1": float(rep.reference[j]),
                    "f1": float(r.f1[j]),
                    "delta": float(r.delta[j]),
                }
            )
    _write_csv_report(cfg, out, rows)


def _bandwidths(cfg: RunConfig) -> dict[str, float]:
    if cfg.bandwidth is not None:
        return {disagg.TO_DEST: cfg.bandwidth, disagg.TO_HOME: cfg.bandwidth}
    if cfg.cv_report is None:
        return {disagg.TO_DEST: disagg.MIN_BANDWIDTH, disagg.TO_HOME: disagg.MIN_BANDWIDTH}
    doc = io.load_json(cfg.cv_report)
    try:
        errors = dict(zip(doc["tasks"], doc["mean_minute_error"]))
    except (KeyError, TypeError):
        raise UsageError(f"{cfg.cv_report}: not a nested-cv report") from None
    out = {}
    for direction, task in ((disagg.TO_DEST, ARRIVE_DEST), (disagg.TO_HOME, ARRIVE_HOME)):
        if task not in errors:
            raise UsageError(f"{cfg.cv_report}: no minute error for task {TASK_NAMES[task]}")
        out[direction] = disagg.default_bandwidth(errors[task])
    return out


def cmd_disagg(cfg: RunConfig) -> None:
    model_p, census_p, towns_p, tt_p = _need(cfg, "model", "census", "towns", "travel_times")
    out = _out(cfg)
    model = io.read_model(model_p)
    odm = disagg.disaggregate(
        model,
        io.read_census(census_p),
        io.read_towns(towns_p),
        io.read_travel_times(tt_p),
        bandwidths=_bandwidths(cfg),
        mode=cfg.disagg_mode,
        seed=derive_seed(cfg.seed, "disagg"),
    )
    _write_csv_report(cfg, out, odm.rows())
    _write_csv_report(cfg, out.with_suffix(".rejects.csv"), ({"record": i, "reason": msg} for i, msg in odm.rejects), ("record", "reason"))


def cmd_features(cfg: RunConfig) -> None:
    table = _load_table(cfg)
    out = _out(cfg)
    enc = featurize.fit(table.schema, table)
    ds = featurize.encode(table, enc)
    lcfg = linear.LinearConfig(epochs=cfg.linear_epochs, seed=cfg.seed)
    models = [linear.train_linear(ds, t, cfg.lam, lcfg) for t in cfg.task_indices]
    rep = linear.feature_relevance(models, enc, cfg.aggregate)
    rows = [{**r, "task": TASK_NAMES[r["task"]]} for r in rep.rows()]
    _write_csv_report(cfg, out, rows)


def cmd_correlate(cfg: RunConfig) -> None:
    a_p, b_p = _need(cfg, "profiles_a", "profiles_b")
    out = _out(cfg)
    rep = disagg.compare_profiles(read_profiles(a_p), read_profiles(b_p))
    rows = [
        {"origin": c.key[0], "destination": c.key[1], "direction": c.key[2], "r": c.r, "p": c.p, "q": c.q}
        for c in rep.pairs
    ]
    _write_csv_report(cfg, out, rows)
    slot_rows = [
        {"slot": s, "r": float(rep.slot_r[s]), "p": float(rep.slot_p[s]), "q": float(rep.slot_q[s])}
        for s in range(len(rep.slot_r))
    ]
    _write_csv_report(cfg, out.with_suffix(".slots.csv"), slot_rows)


def read_profiles(path) -> disagg.ODMatrix:
    """Read a ``disagg`` report back into an O-D matrix."""
    rd = io._Reader(path, ("origin", "destination", "direction", "slot", "raw", "smoothed", "travel", "total_flow"), comments=True)
    odm = disagg.ODMatrix()
    for r in rd:
        key = (r.text("origin"), r.text("destination"), r.text("direction"))
        slot = int(r.number("slot"))
        if not 0 <= slot < disagg.N_SLOTS:
            raise r.error("slot", f"slot {slot} out of range")
        prof = odm.profiles.setdefault(key, disagg.FlowProfile.empty())
        if prof.smoothed is None:
            prof.smoothed = np.zeros(disagg.N_SLOTS)
        prof.raw[slot] = r.number("raw")
        prof.smoothed[slot] = r.number("smoothed")
        prof.travel[slot] = r.number("travel")
        prof.total_flow = r.number("total_flow")
    return odm


HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "nested-cv": cmd_nested_cv,
    "compare-modes": cmd_compare_modes,
    "permtest": cmd_permtest,
    "portability": cmd_portability,
    "disagg": cmd_disagg,
    "features": cmd_features,
    "correlate": cmd_correlate,
}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tripcast", description="Trip-time prediction and census disaggregation.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "synth": "generate a synthetic world (trips, census, towns, travel times, schema)",
        "train": "fit one model on all trips and write it as JSON",
        "nested-cv": "nested cross-validation over the architecture grid",
        "compare-modes": "multi-task vs single-task test scores per structure",
        "permtest": "permutation test of a fixed architecture",
        "portability": "leave-one-survey-out scores against the nested-CV reference",
        "disagg": "apply a model to census records and write O-D time profiles",
        "features": "linear-model feature relevance per task",
        "correlate": "correlate two O-D profile reports",
    }
    fields = RunConfig.model_fields
    for cmd in COMMANDS:
        p = sub.add_parser(cmd, help=helps[cmd], description=helps[cmd])
        p.add_argument("--config", help="JSON file with configuration keys (flags take precedence)")
        for name, info in fields.items():
            if name == "command":
                continue
            kw = {"dest": name, "default": None}
            desc = "path" if name in PATH_FIELDS else f"default {info.default!r}"
            if name in PATH_FIELDS:
                kw["help"] = f"{desc} (env TRIPCAST_{name.upper()})"
            else:
                kw["help"] = desc
            if isinstance(info.default, list):
                kw["nargs"] = "+"
            if info.annotation is bool:
                kw["type"] = _parse_bool
                kw["metavar"] = "{true,false}"
            p.add_argument(_flag(name), **kw)
    return parser


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    """Config file, then ``TRIPCAST_<PATH>`` env vars, then explicit flags."""
    environ = os.environ if environ is None else environ
    doc: dict = {}
    if args.config:
        loaded = io.load_json(args.config)
        if not isinstance(loaded, dict):
            raise UsageError(f"{args.config}: configuration must be a JSON object")
        doc.update(loaded)
    for name in PATH_FIELDS:
        env = environ.get(f"TRIPCAST_{name.upper()}")
        if env:
            doc[name] = env
    for name in RunConfig.model_fields:
        value = getattr(args, name, None)
        if value is not None and name != "command":
            doc[name] = value
    if "command" in doc and doc["command"] != args.command:
        raise UsageError(f"configuration is for {doc['command']!r}, not {args.command!r}")
    doc["command"] = args.command
    return RunConfig.model_validate(doc)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    try:
        cfg = resolve_config(args)
    except (ValidationError, UsageError, io.ParseError, FileNotFoundError) as exc:
        print(f"tripcast: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        HANDLERS[cfg.command](cfg)
    except (UsageError, io.ParseError, DomainError, featurize.SchemaError, FileNotFoundError, KeyError) as exc:
        print(f"tripcast {cfg.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - anything else is a runtime failure
        print(f"tripcast {cfg.command}: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
