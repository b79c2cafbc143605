"""Cross-validation protocol around the network.

Every outer fold fits its own encoders, picks an architecture by inner
cross-validation on the outer training rows only, retrains on the whole
outer training set and is scored on the held-out fold. Encoders are also
refitted inside every inner fold.

An optional ``audit(stage, outer_fold, row_ids)`` callback sees the rows
that reach each stage; tests use it to check that held-out rows never leak.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import featurize
from .domain import CLOCK_TASKS, N_TASKS
from .featurize import TripTable
from .metrics import mean_minute_error, weighted_f1
from .net import ArchitectureSpec, Network, TrainConfig, predict, predict_labels, train
from .runtime import derive_seed, parallel_map

Audit = Callable[[str, int, np.ndarray], None]


class TaskMode(str, Enum):
    MULTI = "multi_task"
    SINGLE = "single_task"


@dataclass(frozen=True)
class FoldPlan:
    """A seeded partition of ``range(n_rows)`` (or of ``rows``) into k folds."""

    k: int
    seed: int
    folds: tuple[np.ndarray, ...]

    @property
    def rows(self) -> np.ndarray:
        return np.sort(np.concatenate(self.folds))

    def split(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        test = self.folds[i]
        train = np.sort(np.concatenate([f for j, f in enumerate(self.folds) if j != i]))
        return train, test

    def inner(self, i: int, k: int) -> "FoldPlan":
        """Folds over the training rows of outer fold ``i``."""
        train, _ = self.split(i)
        return make_folds(len(train), k, derive_seed(self.seed, "inner", i), rows=train)

    def __len__(self):
        return self.k


def make_folds(n_rows: int, k: int, seed: int, rows: np.ndarray | None = None) -> FoldPlan:
    """Seeded shuffle, then contiguous split into k folds whose sizes differ by at most one."""
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    if n_rows < k:
        raise ValueError(f"cannot split {n_rows} rows into {k} folds")
    rows = np.arange(n_rows) if rows is None else np.asarray(rows)
    perm = rows[np.random.default_rng(derive_seed(seed, "folds")).permutation(n_rows)]
    return FoldPlan(k, seed, tuple(np.sort(part) for part in np.array_split(perm, k)))


@dataclass(frozen=True)
class CvConfig:
    outer_k: int = 10
    inner_k: int = 9
    seed: int = 0
    train: TrainConfig = TrainConfig()
    tasks: tuple[int, ...] = tuple(range(N_TASKS))
    misclassified_only: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.outer_k < 2 or self.inner_k < 2:
            raise ValueError("fold counts must be at least 2")
        if not self.tasks or any(t not in range(N_TASKS) for t in self.tasks) or len(set(self.tasks)) != len(self.tasks):
            raise ValueError(f"tasks must be distinct indices in [0, {N_TASKS})")


@dataclass
class FittedModel:
    """Encoders plus one network (multi-task) or one per task (single-task)."""

    encoders: featurize.FittedEncoders
    nets: list[Network]
    tasks: tuple[int, ...]
    mode: TaskMode

    def predict_proba(self, X: np.ndarray) -> list[np.ndarray]:
        out = []
        for net in self.nets:
            out += predict(net, X)
        return out

    def predict_labels(self, X: np.ndarray) -> np.ndarray:
        return np.hstack([predict_labels(net, X) for net in self.nets])


def fit_model(
    table: TripTable,
    rows: np.ndarray,
    spec: ArchitectureSpec,
    cfg: CvConfig,
    seed: int,
    mode: TaskMode = TaskMode.MULTI,
) -> FittedModel:
    """Fit encoders and network(s) on ``rows`` of ``table``."""
    part = table.subset(rows)
    enc = featurize.fit(table.schema, part)
    ds = featurize.encode(part, enc)
    tcfg = replace(cfg.train, seed=seed)
    tasks = tuple(cfg.tasks)
    if TaskMode(mode) is TaskMode.MULTI:
        groups = [tasks]
    else:
        # every single-task net shares the run seed, so one task in either mode is the same model
        groups = [(t,) for t in tasks]
    nets = []
    for g in groups:
        net, _ = train(ds.X, ds.Y[:, list(g)], replace(spec, n_tasks=len(g)), tcfg, ds.weights)
        nets.append(net)
    return FittedModel(enc, nets, tasks, TaskMode(mode))


@dataclass(frozen=True)
class FoldScore:
    f1: np.ndarray  # per task in cfg.tasks
    minute_error: np.ndarray

    @property
    def mean_f1(self) -> float:
        return float(np.mean(self.f1))


def score_model(model: FittedModel, table: TripTable, rows: np.ndarray, cfg: CvConfig) -> FoldScore:
    part = table.subset(rows)
    pred = model.predict_labels(featurize.transform(part, model.encoders))
    f1, err = [], []
    for j, t in enumerate(model.tasks):
        f1.append(weighted_f1(part.Y[:, t], pred[:, j]))
        err.append(mean_minute_error(part.Y[:, t], pred[:, j], clock=CLOCK_TASKS[t], misclassified_only=cfg.misclassified_only))
    return FoldScore(np.array(f1), np.array(err))


def _fit_and_score(table, train_rows, test_rows, spec, cfg, seed, mode, audit=None, fold=-1, stage="train") -> FoldScore:
    if audit is not None:
        audit(stage, fold, table.row_ids[train_rows])
    model = fit_model(table, train_rows, spec, cfg, seed, mode)
    return score_model(model, table, test_rows, cfg)


@dataclass(frozen=True)
class Selection:
    spec: ArchitectureSpec
    score: float
    log: dict[str, list[float]]  # grid label -> mean-over-tasks F1 per inner fold

    def means(self) -> dict[str, float]:
        return {k: float(np.mean(v)) for k, v in self.log.items()}


def inner_select(
    table: TripTable,
    train_rows: np.ndarray,
    grid: Sequence[ArchitectureSpec],
    cfg: CvConfig,
    seed: int,
    mode: TaskMode = TaskMode.MULTI,
    audit: Audit | None = None,
    fold: int = -1,
    plan: FoldPlan | None = None,
) -> Selection:
    """Grid point with the best mean inner-fold score; earlier grid points win ties."""
    if not grid:
        raise ValueError("empty hyperparameter grid")
    if len(grid) == 1:
        # nothing to choose between; skip the inner folds
        return Selection(grid[0], float("nan"), {})
    plan = plan or make_folds(len(train_rows), cfg.inner_k, derive_seed(seed, "inner-folds"), rows=train_rows)
    log: dict[str, list[float]] = {}
    best_i, best = 0, -np.inf
    for gi, spec in enumerate(grid):
        scores = []
        for j in range(plan.k):
            tr, va = plan.split(j)
            s = _fit_and_score(table, tr, va, spec, cfg, derive_seed(seed, "inner", j), mode, audit, fold, "select")
            scores.append(s.mean_f1)
        log[spec.label] = scores
        m = float(np.mean(scores))
        if m > best:
            best_i, best = gi, m
    return Selection(grid[best_i], best, log)


@dataclass(frozen=True)
class FoldResult:
    fold: int
    spec: ArchitectureSpec
    validation_score: float
    test_f1: np.ndarray
    minute_error: np.ndarray
    inner_log: dict[str, list[float]] = field(default_factory=dict)


@dataclass(frozen=True)
class CvResult:
    folds: tuple[FoldResult, ...]
    tasks: tuple[int, ...]
    mode: TaskMode

    @property
    def f1(self) -> np.ndarray:
        """(n_folds, n_tasks) test scores."""
        return np.array([f.test_f1 for f in self.folds])

    @property
    def minute_error(self) -> np.ndarray:
        return np.array([f.minute_error for f in self.folds])

    @property
    def mean_f1(self) -> np.ndarray:
        return self.f1.mean(axis=0)

    @property
    def std_f1(self) -> np.ndarray:
        return self.f1.std(axis=0)

    @property
    def score(self) -> float:
        """Mean over folds and tasks."""
        return float(self.f1.mean())

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "tasks": list(self.tasks),
            "folds": [
                {
                    "fold": f.fold,
                    "spec": f.spec.label,
                    "validation_score": f.validation_score,
                    "test_f1": f.test_f1.tolist(),
                    "minute_error": f.minute_error.tolist(),
                    "inner_log": f.inner_log,
                }
                for f in self.folds
            ],
            "mean_f1": self.mean_f1.tolist(),
            "std_f1": self.std_f1.tolist(),
            "mean_minute_error": self.minute_error.mean(axis=0).tolist(),
            "score": self.score,
        }


def nested_cv(
    table: TripTable,
    grid: Sequence[ArchitectureSpec],
    cfg: CvConfig = CvConfig(),
    mode: TaskMode = TaskMode.MULTI,
    audit: Audit | None = None,
    plan: FoldPlan | None = None,
) -> CvResult:
    plan = plan or make_folds(len(table), cfg.outer_k, cfg.seed)

    def run(i: int) -> FoldResult:
        train_rows, test_rows = plan.split(i)
        if audit is not None:
            audit("encoders", i, table.row_ids[train_rows])
        sel = inner_select(
            table, train_rows, grid, cfg, derive_seed(cfg.seed, "select", i), mode, audit, i, plan.inner(i, cfg.inner_k)
        )
        s = _fit_and_score(table, train_rows, test_rows, sel.spec, cfg, derive_seed(cfg.seed, "outer", i), mode, audit, i)
        if audit is not None:
            audit("test", i, table.row_ids[test_rows])
        return FoldResult(i, sel.spec, sel.score, s.f1, s.minute_error, sel.log)

    folds = parallel_map(run, range(plan.k), cfg.threads if audit is None else 1)
    return CvResult(tuple(folds), tuple(cfg.tasks), TaskMode(mode))


def outer_scores(
    table: TripTable,
    spec: ArchitectureSpec,
    cfg: CvConfig,
    plan: FoldPlan,
    mode: TaskMode = TaskMode.MULTI,
) -> np.ndarray:
    """(n_folds, n_tasks) test F1 of a fixed architecture over the outer folds."""
    rows = []
    for i in range(plan.k):
        tr, te = plan.split(i)
        rows.append(_fit_and_score(table, tr, te, spec, cfg, derive_seed(cfg.seed, "outer", i), mode).f1)
    return np.array(rows)


@dataclass(frozen=True)
class ModeComparison:
    structures: tuple[str, ...]
    tasks: tuple[int, ...]
    scores: dict[str, dict[str, np.ndarray]]  # structure -> mode -> (n_folds, n_tasks)

    def mean_difference(self, structure: str) -> np.ndarray:
        """Per-task mean multi minus single test F1."""
        s = self.scores[structure]
        return s[TaskMode.MULTI.value].mean(axis=0) - s[TaskMode.SINGLE.value].mean(axis=0)

    def rows(self):
        for st in self.structures:
            for mode, arr in self.scores[st].items():
                for fold in range(arr.shape[0]):
                    for j, t in enumerate(self.tasks):
                        yield {"structure": st, "mode": mode, "fold": fold, "task": t, "f1": float(arr[fold, j])}


def compare_modes(
    table: TripTable,
    structures: Sequence[ArchitectureSpec],
    cfg: CvConfig = CvConfig(),
    plan: FoldPlan | None = None,
) -> ModeComparison:
    """Multi- vs single-task test scores per structure on one shared fold plan."""
    plan = plan or make_folds(len(table), cfg.outer_k, cfg.seed)
    jobs = [(s, m) for s in structures for m in (TaskMode.MULTI, TaskMode.SINGLE)]
    results = parallel_map(lambda job: outer_scores(table, job[0], cfg, plan, job[1]), jobs, cfg.threads)
    scores: dict[str, dict[str, np.ndarray]] = {}
    for (s, m), arr in zip(jobs, results):
        scores.setdefault(s.label, {})[m.value] = arr
    return ModeComparison(tuple(s.label for s in structures), tuple(cfg.tasks), scores)


@dataclass(frozen=True)
class PermutationResult:
    observed: np.ndarray  # per-task mean test F1
    null: np.ndarray  # (n_perm, n_tasks)
    tasks: tuple[int, ...]

    @property
    def n_perm(self) -> int:
        return self.null.shape[0]

    @property
    def pvalues(self) -> np.ndarray:
        return empirical_pvalue(self.observed, self.null)

    @property
    def pvalue_mean(self) -> float:
        """p-value of the mean-over-tasks score."""
        return float(empirical_pvalue(self.observed.mean(), self.null.mean(axis=1)))


def empirical_pvalue(observed, null) -> np.ndarray:
    """(1 + #{null >= observed}) / (1 + n_null), along the first axis of ``null``."""
    null = np.asarray(null, dtype=float)
    return (1.0 + np.sum(null >= np.asarray(observed), axis=0)) / (1.0 + null.shape[0])


def permutation_test(
    table: TripTable,
    spec: ArchitectureSpec,
    cfg: CvConfig = CvConfig(),
    n_perm: int = 100,
    plan: FoldPlan | None = None,
) -> PermutationResult:
    """Empirical p-values of the outer-CV score under jointly permuted targets.

    One row permutation is applied to the whole target matrix per replicate,
    so the targets keep their mutual correlation. Architecture and training
    seeds stay fixed; only the weights are retrained.
    """
    if n_perm < 1:
        raise ValueError("n_perm must be at least 1")
    plan = plan or make_folds(len(table), cfg.outer_k, cfg.seed)

    def replicate(r: int) -> np.ndarray:
        if r < 0:
            t = table
        else:
            perm = np.random.default_rng(derive_seed(cfg.seed, "perm", r)).permutation(len(table))
            t = table.with_targets(table.Y[perm])
        return outer_scores(t, spec, cfg, plan).mean(axis=0)

    results = parallel_map(replicate, range(-1, n_perm), cfg.threads)
    return PermutationResult(results[0], np.array(results[1:]), tuple(cfg.tasks))


@dataclass(frozen=True)
class PortabilityRow:
    group: str
    n_rows: int
    spec: ArchitectureSpec
    f1: np.ndarray
    delta: np.ndarray

    @property
    def mean_delta(self) -> float:
        return float(self.delta.mean())


@dataclass(frozen=True)
class PortabilityReport:
    reference: np.ndarray  # per-task nested-CV mean F1
    rows: tuple[PortabilityRow, ...]
    tasks: tuple[int, ...]


def leave_one_group_out(
    table: TripTable,
    grid: Sequence[ArchitectureSpec],
    cfg: CvConfig = CvConfig(),
    reference: CvResult | None = None,
) -> PortabilityReport:
    """Train on every survey but one, score on the held-out survey, report the
    change against the nested-CV reference score."""
    groups = sorted(set(table.groups.tolist()))
    if len(groups) < 2:
        raise ValueError("leave-one-group-out needs at least two distinct survey groups")
    if reference is None:
        reference = nested_cv(table, grid, cfg)
    ref = reference.mean_f1

    def run(gi: int) -> PortabilityRow:
        g = groups[gi]
        held = np.flatnonzero(table.groups == g)
        rest = np.flatnonzero(table.groups != g)
        sel = inner_select(table, rest, grid, cfg, derive_seed(cfg.seed, "logo-select", gi))
        s = _fit_and_score(table, rest, held, sel.spec, cfg, derive_seed(cfg.seed, "logo", gi), TaskMode.MULTI)
        return PortabilityRow(str(g), len(held), sel.spec, s.f1, s.f1 - ref)

    rows = parallel_map(run, range(len(groups)), cfg.threads)
    return PortabilityReport(ref, tuple(rows), tuple(cfg.tasks))
