"""Multi-task multilayer perceptron written directly on numpy.

A shared trunk of ReLU layers feeds one softmax head per task. All heads
share one weight matrix of shape ``(last_hidden, n_tasks * classes)`` so a
single matmul produces every task's logits; ``Network.heads`` exposes the
per-task views.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .domain import N_SLOTS, N_TASKS
from .runtime import derive_seed

FAMILIES = ("uniform", "pyramidal")
DROPOUT_RATES = (0.0, 0.25, 0.5)
MIN_WIDTH = 4


@dataclass(frozen=True)
class ArchitectureSpec:
    family: str = "pyramidal"
    n_hidden: int = 3
    dropout: float = 0.0
    n_inputs: int = 0  # 0 until bound to an encoded dataset
    n_tasks: int = N_TASKS
    classes_per_task: int = N_SLOTS
    widths: tuple[int, ...] | None = None  # explicit hidden widths, bypassing the family rule

    def __post_init__(self):
        if self.family not in FAMILIES and self.widths is None:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.widths is None and not 2 <= self.n_hidden <= 10:
            raise ValueError(f"n_hidden must be in [2, 10], got {self.n_hidden}")
        if self.widths is not None:
            object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
            object.__setattr__(self, "n_hidden", len(self.widths))
            if not self.widths or min(self.widths) < 1:
                raise ValueError("explicit widths must be a non-empty list of positive ints")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.n_inputs < 0 or self.n_tasks < 1 or self.classes_per_task < 2:
            raise ValueError("invalid input / task / class counts")

    @property
    def n_outputs(self) -> int:
        return self.n_tasks * self.classes_per_task

    def bind(self, n_inputs: int) -> "ArchitectureSpec":
        return replace(self, n_inputs=int(n_inputs))

    def hidden_widths(self) -> tuple[int, ...]:
        if self.widths is not None:
            return self.widths
        if self.n_inputs <= 0:
            raise ValueError("architecture is not bound to an input width yet")
        if self.family == "uniform":
            w = max(MIN_WIDTH, round(2.0 / 3.0 * (self.n_inputs + self.n_outputs)))
            return (w,) * self.n_hidden
        # geometric interpolation from the input width to the total output width
        rate = (self.n_outputs / self.n_inputs) ** (1.0 / (self.n_hidden + 1))
        return tuple(max(MIN_WIDTH, round(self.n_inputs * rate**k)) for k in range(1, self.n_hidden + 1))

    @property
    def label(self) -> str:
        if self.widths is not None:
            return "custom-" + "x".join(map(str, self.widths)) + f"-d{self.dropout:g}"
        return f"{self.family}-{self.n_hidden}-d{self.dropout:g}"

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "n_hidden": self.n_hidden,
            "dropout": self.dropout,
            "n_inputs": self.n_inputs,
            "n_tasks": self.n_tasks,
            "classes_per_task": self.classes_per_task,
            "widths": None if self.widths is None else list(self.widths),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        d = dict(d)
        if d.get("widths") is not None:
            d["widths"] = tuple(d["widths"])
        return cls(**d)


def structure_grid(depths=range(2, 11), families=FAMILIES) -> list[ArchitectureSpec]:
    """The (family, depth) structures, uniform first and shallow first."""
    return [ArchitectureSpec(fam, d) for fam in families for d in depths]


def full_grid(depths=range(2, 11), families=FAMILIES, dropouts=DROPOUT_RATES) -> list[ArchitectureSpec]:
    """Structures crossed with dropout rates, in tie-break order."""
    return [replace(s, dropout=float(p)) for s in structure_grid(depths, families) for p in dropouts]


def _layout(spec: ArchitectureSpec) -> list[tuple[int, ...]]:
    dims = [spec.n_inputs, *spec.hidden_widths(), spec.n_outputs]
    shapes = []
    for a, b in zip(dims[:-1], dims[1:]):
        shapes += [(a, b), (b,)]
    return shapes


class Network:
    """Parameters live in one flat vector ``theta``; layer arrays are views into it.

    ``theta`` is float64 unless a float32 vector is passed (used while training).
    """

    def __init__(self, spec: ArchitectureSpec, theta: np.ndarray, seed: int = 0):
        self.spec = spec
        self.seed = seed
        self.shapes = _layout(spec)
        size = sum(math.prod(s) for s in self.shapes)
        theta = np.asarray(theta)
        theta = np.ascontiguousarray(theta, dtype=np.float32 if theta.dtype == np.float32 else float)
        if theta.shape != (size,):
            raise ValueError(f"expected {size} parameters for {spec.label}, got {theta.shape}")
        self.theta = theta
        self._views = split_flat(theta, self.shapes)

    @property
    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        v = self._views[:-2]
        return [(v[i], v[i + 1]) for i in range(0, len(v), 2)]

    @property
    def head_W(self) -> np.ndarray:
        return self._views[-2]

    @property
    def head_b(self) -> np.ndarray:
        return self._views[-1]

    @property
    def heads(self) -> list[tuple[np.ndarray, np.ndarray]]:
        c = self.spec.classes_per_task
        return [(self.head_W[:, t * c:(t + 1) * c], self.head_b[t * c:(t + 1) * c]) for t in range(self.spec.n_tasks)]

    def params(self) -> list[np.ndarray]:
        return list(self._views)

    def param_names(self) -> list[str]:
        names = []
        for i in range(len(self.shapes) // 2 - 1):
            names += [f"hidden{i + 1}.W", f"hidden{i + 1}.b"]
        return names + ["heads.W", "heads.b"]

    def copy(self) -> "Network":
        return Network(self.spec, self.theta.copy(), self.seed)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "seed": self.seed,
            "params": [
                {"name": n, "shape": list(p.shape), "values": p.ravel(order="C").tolist()}
                for n, p in zip(self.param_names(), self.params())
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Network":
        spec = ArchitectureSpec.from_dict(doc["spec"])
        expected = _layout(spec)
        got = [tuple(p["shape"]) for p in doc["params"]]
        if got != expected:
            raise ValueError(f"parameter shapes {got} do not chain as {expected}")
        for p in doc["params"]:
            if len(p["values"]) != math.prod(p["shape"]):
                raise ValueError(f"parameter {p.get('name')} has the wrong number of values")
        theta = np.concatenate([np.asarray(p["values"], dtype=float) for p in doc["params"]])
        if not np.all(np.isfinite(theta)):
            raise ValueError("non-finite parameters")
        return cls(spec, theta, int(doc.get("seed", 0)))


def split_flat(flat: np.ndarray, shapes) -> list[np.ndarray]:
    out, offset = [], 0
    for s in shapes:
        k = math.prod(s)
        out.append(flat[offset:offset + k].reshape(s))
        offset += k
    return out


def init_network(spec: ArchitectureSpec, seed: int, scheme: str = "he") -> Network:
    """Zero biases; weights He-normal (default) or Glorot-uniform."""
    if spec.n_inputs <= 0:
        raise ValueError("bind the architecture to an input width before initializing")
    rng = np.random.default_rng(derive_seed(seed, "init"))
    net = Network(spec, np.zeros(sum(math.prod(s) for s in _layout(spec))), seed)
    for W in net.params()[::2]:
        fan_in, fan_out = W.shape
        if scheme == "he":
            W[...] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=W.shape)
        elif scheme == "glorot":
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            W[...] = rng.uniform(-limit, limit, size=W.shape)
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
    return net


def softmax_blocks(logits: np.ndarray, n_tasks: int) -> np.ndarray:
    """Row-wise softmax within each task block; returns (batch, n_tasks, classes).

    Works in place: ``logits`` is overwritten.
    """
    z = logits.reshape(logits.shape[0], n_tasks, -1)
    z -= z.max(axis=2, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=2, keepdims=True)
    return z


@dataclass
class Cache:
    inputs: list[np.ndarray]  # input to each trunk layer, then the input to the heads
    pre: list[np.ndarray]  # pre-activations of the trunk layers
    masks: list[np.ndarray | None]  # scaled dropout masks (None in infer mode)
    probs: np.ndarray  # (batch, n_tasks, classes)


def _check_input(net: Network, X) -> np.ndarray:
    X = np.asarray(X, dtype=net.theta.dtype)
    if X.ndim != 2 or X.shape[1] != net.spec.n_inputs:
        raise ValueError(f"expected input width {net.spec.n_inputs}, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input")
    return X


def forward(net: Network, X: np.ndarray, rng: np.random.Generator | None = None) -> tuple[list[np.ndarray], Cache]:
    """Forward pass. Passing ``rng`` selects train mode (inverted dropout)."""
    return _forward(net, _check_input(net, X), rng)


def _forward(net: Network, X: np.ndarray, rng: np.random.Generator | None = None) -> tuple[list[np.ndarray], Cache]:
    p = net.spec.dropout
    h = X
    inputs, pre, masks = [], [], []
    for W, b in net.layers:
        inputs.append(h)
        a = h @ W + b
        pre.append(a)
        h = np.maximum(a, 0.0)
        if rng is not None and p > 0.0:
            mask = (rng.random(h.shape) >= p).astype(h.dtype)
            mask /= 1.0 - p
            h = h * mask
            masks.append(mask)
        else:
            masks.append(None)
    inputs.append(h)
    probs = softmax_blocks(h @ net.head_W + net.head_b, net.spec.n_tasks)
    return [probs[:, t, :] for t in range(net.spec.n_tasks)], Cache(inputs, pre, masks, probs)


def _normalized_weights(n: int, sample_weights) -> np.ndarray:
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    total = w.sum()
    if not total > 0.0:
        raise ValueError("total sample weight is zero")
    return w / total


def loss(probs, Y: np.ndarray, sample_weights=None) -> float:
    """Sum over tasks of the weighted mean cross-entropy."""
    Y = np.asarray(Y)
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(probs) != Y.shape[1]:
        raise ValueError(f"{len(probs)} probability matrices for {Y.shape[1]} label columns")
    w = _normalized_weights(Y.shape[0], sample_weights)
    rows = np.arange(Y.shape[0])
    tiny = np.finfo(float).tiny
    total = 0.0
    for t, P in enumerate(probs):
        total += float(w @ -np.log(np.maximum(P[rows, Y[:, t]], tiny)))
    return total


def backward_flat(net: Network, cache: Cache, Y: np.ndarray, sample_weights=None, consume: bool = False) -> np.ndarray:
    """Gradient of ``loss`` as one vector laid out like ``net.theta``.

    ``consume=True`` lets the pass overwrite ``cache.probs`` instead of copying it.
    """
    Y = np.asarray(Y)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = Y.shape[0]
    w = _normalized_weights(n, sample_weights)
    d = cache.probs if consume else cache.probs.copy()
    d[np.arange(n)[:, None], np.arange(Y.shape[1])[None, :], Y] -= 1.0
    d *= w[:, None, None]
    dlogits = d.reshape(n, -1)

    flat = np.empty_like(net.theta)
    g = split_flat(flat, net.shapes)
    np.matmul(cache.inputs[-1].T, dlogits, out=g[-2])
    np.sum(dlogits, axis=0, out=g[-1])
    dh = dlogits @ net.head_W.T
    layers = net.layers
    for i in range(len(layers) - 1, -1, -1):
        if cache.masks[i] is not None:
            dh *= cache.masks[i]
        dh *= cache.pre[i] > 0.0
        np.matmul(cache.inputs[i].T, dh, out=g[2 * i])
        np.sum(dh, axis=0, out=g[2 * i + 1])
        if i > 0:
            dh = dh @ layers[i][0].T
    return flat


def backward(net: Network, cache: Cache, Y: np.ndarray, sample_weights=None) -> list[np.ndarray]:
    """Gradients of ``loss`` w.r.t. ``net.params()``, in the same order."""
    return split_flat(backward_flat(net, cache, Y, sample_weights), net.shapes)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 128
    max_epochs: int = 500
    patience: int = 10
    early_stop_fraction: float = 0.1
    seed: int = 0
    init: str = "he"
    use_sample_weights: bool = True
    precision: str = "float32"  # arithmetic inside the training loop; results are float64

    def __post_init__(self):
        for name in ("learning_rate", "epsilon", "batch_size", "max_epochs", "patience"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in (0, 1)")
        if not 0.0 < self.early_stop_fraction <= 0.5:
            raise ValueError("early_stop_fraction must lie in (0, 0.5]")
        if self.precision not in ("float32", "float64"):
            raise ValueError("precision must be 'float32' or 'float64'")
        if self.init not in ("he", "glorot"):
            raise ValueError("init must be 'he' or 'glorot'")


@dataclass
class AdamState:
    """First and second moments, flat like ``Network.theta``."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    buf: np.ndarray | None = field(default=None, repr=False, compare=False)  # scratch space

    @classmethod
    def for_network(cls, net: Network) -> "AdamState":
        return cls(np.zeros_like(net.theta), np.zeros_like(net.theta), 0)


def adam_step(net: Network, grads, state: AdamState, config: TrainConfig) -> tuple[Network, AdamState]:
    """One bias-corrected Adam update, applied in place.

    ``grads`` is either a flat vector or a list shaped like ``net.params()``.
    """
    g = grads if isinstance(grads, np.ndarray) else np.concatenate([np.ravel(a) for a in grads])
    if g.shape != net.theta.shape:
        raise ValueError("gradient does not match the network parameters")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    if state.buf is None or state.buf.shape != g.shape:
        state.buf = np.empty_like(g)
    buf = state.buf
    np.multiply(g, 1.0 - b1, out=buf)
    state.m *= b1
    state.m += buf
    np.multiply(g, g, out=buf)
    buf *= 1.0 - b2
    state.v *= b2
    state.v += buf
    step_size = config.learning_rate * math.sqrt(1.0 - b2**state.t) / (1.0 - b1**state.t)
    # eps scaled so this equals lr * m_hat / (sqrt(v_hat) + eps)
    np.sqrt(state.v, out=buf)
    buf += config.epsilon * math.sqrt(1.0 - b2**state.t)
    np.divide(state.m, buf, out=buf)
    buf *= step_size
    net.theta -= buf
    return net, state


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    stop_loss: list[float] = field(default_factory=list)  # index 0 is the untrained network
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


def predict(net: Network, X: np.ndarray, batch_size: int = 4096) -> list[np.ndarray]:
    chunks = [forward(net, X[i:i + batch_size])[0] for i in range(0, max(len(X), 1), batch_size)]
    return [np.vstack([c[t] for c in chunks]) for t in range(net.spec.n_tasks)]


def predict_labels(net: Network, X: np.ndarray) -> np.ndarray:
    """Per-task argmax; ties resolve to the lowest slot."""
    return np.stack([P.argmax(axis=1) for P in predict(net, X)], axis=1)


def _eval_loss(net, X, Y, w) -> float:
    return loss(predict(net, X), Y, w)


def train(
    X: np.ndarray,
    Y: np.ndarray,
    spec: ArchitectureSpec,
    config: TrainConfig = TrainConfig(),
    sample_weights=None,
) -> tuple[Network, History]:
    """Mini-batch Adam with validation-based early stopping.

    A seeded ``early_stop_fraction`` of the rows is held out as the stop set.
    Training ends after ``patience`` epochs without a new best stop-set loss
    (or at ``max_epochs``) and the best-epoch parameters are restored.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = X.shape[0]
    if n < 2 * config.batch_size:
        raise ValueError(f"{n} rows is fewer than two batches of {config.batch_size}")
    if Y.shape != (n, spec.n_tasks):
        raise ValueError(f"labels must have shape ({n}, {spec.n_tasks}), got {Y.shape}")
    w = np.ones(n) if sample_weights is None or not config.use_sample_weights else np.asarray(sample_weights, float)

    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise ValueError("inputs must be a finite 2-D array")
    spec = spec.bind(X.shape[1])
    seed = config.seed
    split_rng = np.random.default_rng(derive_seed(seed, "stop-split"))
    order = split_rng.permutation(n)
    n_stop = max(1, int(round(config.early_stop_fraction * n)))
    stop_idx, fit_idx = order[:n_stop], order[n_stop:]
    dtype = np.dtype(config.precision)
    X = X.astype(dtype, copy=False)
    X_fit, Y_fit, w_fit = X[fit_idx], Y[fit_idx], w[fit_idx]
    X_stop, Y_stop, w_stop = X[stop_idx], Y[stop_idx], w[stop_idx]
    if w_stop.sum() <= 0:
        w_stop = np.ones_like(w_stop)

    net = init_network(spec, seed, config.init)
    net = Network(spec, net.theta.astype(dtype), seed)
    state = AdamState.for_network(net)
    shuffle_rng = np.random.default_rng(derive_seed(seed, "shuffle"))
    dropout_rng = np.random.default_rng(derive_seed(seed, "dropout"))

    hist = History()
    best = _eval_loss(net, X_stop, Y_stop, w_stop)
    hist.stop_loss.append(best)
    best_theta = net.theta.copy()
    wait = 0
    bs = config.batch_size
    for epoch in range(1, config.max_epochs + 1):
        perm = shuffle_rng.permutation(len(fit_idx))
        total, mass = 0.0, 0.0
        for start in range(0, len(perm), bs):
            idx = perm[start:start + bs]
            wb = w_fit[idx]
            wsum = wb.sum()
            if wsum <= 0:
                continue
            probs, cache = _forward(net, X_fit[idx], rng=dropout_rng)
            total += loss(probs, Y_fit[idx], wb) * wsum
            mass += wsum
            adam_step(net, backward_flat(net, cache, Y_fit[idx], wb, consume=True), state, config)
        hist.train_loss.append(total / mass if mass else float("nan"))
        current = _eval_loss(net, X_stop, Y_stop, w_stop)
        hist.stop_loss.append(current)
        if current < best:
            best, wait = current, 0
            hist.best_epoch = epoch
            best_theta = net.theta.copy()
        else:
            wait += 1
            if wait >= config.patience:
                hist.stopped_early = True
                break
    return Network(spec, best_theta.astype(float), seed), hist


def gradient_check(
    net: Network,
    X: np.ndarray,
    Y: np.ndarray,
    sample_weights=None,
    h: float = 1e-5,
    coords_per_array: int = 40,
    seed: int = 0,
) -> dict[str, float]:
    """Central finite differences against ``backward`` on a sample of coordinates.

    For every parameter array, half of the probed coordinates are the largest
    analytic gradient entries and half are drawn at random. Returns, per
    array, ``|a - n| / (|a| + |n|)`` over the probed coordinates (0 when both
    vanish). Dropout must be 0 so the loss is deterministic.
    """
    if net.spec.dropout != 0.0:
        raise ValueError("gradient checks need dropout 0")
    _, cache = forward(net, X)
    analytic = backward_flat(net, cache, Y, sample_weights)
    rng = np.random.default_rng(derive_seed(seed, "gradcheck"))
    theta = net.theta
    out = {}
    offset = 0
    for name, shape in zip(net.param_names(), net.shapes):
        size = math.prod(shape)
        a_block = analytic[offset:offset + size]
        k = min(size, coords_per_array)
        top = np.argsort(-np.abs(a_block), kind="stable")[: k // 2]
        rest = np.setdiff1d(np.arange(size), top)
        pick = np.concatenate([top, rng.choice(rest, size=min(len(rest), k - len(top)), replace=False)]) + offset
        num = np.empty(len(pick))
        for i, j in enumerate(pick):
            old = theta[j]
            theta[j] = old + h
            up = loss(forward(net, X)[0], Y, sample_weights)
            theta[j] = old - h
            down = loss(forward(net, X)[0], Y, sample_weights)
            theta[j] = old
            num[i] = (up - down) / (2.0 * h)
        a = analytic[pick]
        denom = np.linalg.norm(a) + np.linalg.norm(num)
        out[name] = float(np.linalg.norm(a - num) / denom) if denom > 0 else 0.0
        offset += size
    return out
