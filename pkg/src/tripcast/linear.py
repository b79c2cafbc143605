"""One-vs-rest linear max-margin baseline and weight-based feature relevance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import N_SLOTS
from .featurize import CATEGORY_ORDER, Dataset, FeatureCategory, FittedEncoders
from .runtime import derive_seed


@dataclass(frozen=True)
class LinearConfig:
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class LinearModel:
    W: np.ndarray  # (n_features, n_classes)
    b: np.ndarray  # (n_classes,)
    lam: float
    task: int
    columns: tuple[str, ...]

    def scores(self, X: np.ndarray) -> np.ndarray:
        return X @ self.W + self.b

    def predict(self, X: np.ndarray) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. the lowest class on ties
        return self.scores(X).argmax(axis=1)


def train_linear(
    data: Dataset,
    task: int,
    lam: float = 1e-3,
    config: LinearConfig = LinearConfig(),
    n_classes: int = N_SLOTS,
) -> LinearModel:
    """96 one-vs-rest L2-regularized hinge classifiers, fitted jointly.

    Minimizes ``lam/2 |W|^2 + mean_i w_i sum_c max(0, 1 - s_ic (x_i.w_c + b_c))``
    with s_ic = +1 for the true class and -1 otherwise, by seeded mini-batch
    subgradient steps of size ``lr / sqrt(t)``. The L2 term is applied as a
    proximal shrink so that large ``lam`` cannot make the iteration diverge.
    Biases are not regularized and start at -1, where every negative already
    meets its margin. Starting from zero instead lets frequent one-hot columns
    absorb the per-class offset faster than the bias does, which inflates
    their weights long before the iteration converges.
    """
    if lam < 0:
        raise ValueError(f"regularization strength must be >= 0, got {lam}")
    if data.Y is None:
        raise ValueError("dataset has no targets")
    X = data.X
    y = data.Y[:, task]
    w = data.weights
    n, d = X.shape
    rng = np.random.default_rng(derive_seed(config.seed, "linear", task))
    W = np.zeros((d, n_classes))
    b = -np.ones(n_classes)
    sign = -np.ones((n, n_classes))
    sign[np.arange(n), y] = 1.0
    t = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            wb = w[idx]
            if wb.sum() <= 0:
                continue
            t += 1
            eta = config.learning_rate / np.sqrt(t)
            s = sign[idx]
            active = (s * (X[idx] @ W + b) < 1.0) * (wb / wb.sum())[:, None]
            coef = -active * s
            W = (W - eta * (X[idx].T @ coef)) / (1.0 + eta * lam)
            b = b - eta * coef.sum(axis=0)
    return LinearModel(W, b, lam, task, data.encoders.column_names)


@dataclass(frozen=True)
class FeatureWeight:
    name: str
    category: FeatureCategory
    value: float


@dataclass(frozen=True)
class TaskRelevance:
    task: int
    ranking: tuple[FeatureWeight, ...]
    shares: dict[str, float]

    @property
    def top(self) -> FeatureWeight:
        return self.ranking[0]


@dataclass(frozen=True)
class RelevanceReport:
    tasks: tuple[TaskRelevance, ...]
    aggregate: str

    def rows(self):
        for tr in self.tasks:
            for rank, fw in enumerate(tr.ranking, start=1):
                yield {"task": tr.task, "rank": rank, "feature": fw.name, "category": fw.category.value, "weight": fw.value}


def _aggregate(block: np.ndarray, how: str) -> float:
    a = np.abs(block)
    if how == "sum":
        return float(a.sum())
    if how == "max":
        return float(a.max()) if a.size else 0.0
    if how == "l2":
        return float(np.sqrt((a * a).sum()))
    raise ValueError(f"unknown aggregate {how!r}")


def _block_weights(W: np.ndarray, feature, n_levels: int) -> np.ndarray:
    """A feature's weight rows, centred per class for one-hot blocks.

    The one-hot columns of a block sum to 1 on every row, so adding a constant
    to all of them for a class is the same model as moving that constant into
    the bias. Only deviations from the per-class mean over the levels seen in
    training carry information; the unknown bucket is left as is.
    """
    if feature.numeric:
        return W
    seen = W[:n_levels]
    return np.vstack([seen - seen.mean(axis=0, keepdims=True), W[n_levels:]])


def feature_relevance(
    models, encoders: FittedEncoders, aggregate: str = "sum", center: bool = True
) -> RelevanceReport:
    """Per-feature weight mass of each task's linear model.

    One-hot columns of a categorical feature are merged into one entry, by
    default after removing their per-class common offset (see
    ``_block_weights``); ``center=False`` aggregates the raw weights. Category
    shares are the category's summed mass over the total.
    """
    names = encoders.column_names
    owners = np.array(encoders.column_features)
    feats = encoders.schema.features
    out = []
    for m in models:
        if tuple(m.columns) != names:
            raise ValueError(f"model for task {m.task} was trained on different encoded columns")
        weights = []
        for j in sorted(set(owners.tolist())):
            f = feats[j]
            block = m.W[owners == j]
            if center:
                block = _block_weights(block, f, 0 if f.numeric else len(encoders.levels[f.name]))
            weights.append(FeatureWeight(f.name, f.category, _aggregate(block, aggregate)))
        total = sum(fw.value for fw in weights)
        shares = {c.value: 0.0 for c in CATEGORY_ORDER}
        for fw in weights:
            shares[fw.category.value] += fw.value / total if total > 0 else 0.0
        ranking = tuple(sorted(weights, key=lambda fw: (-fw.value, fw.name)))
        out.append(TaskRelevance(m.task, ranking, shares))
    return RelevanceReport(tuple(out), aggregate)
