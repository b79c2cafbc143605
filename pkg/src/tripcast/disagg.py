"""Census disaggregation into time-resolved origin-destination profiles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import featurize
from .domain import DAY_MINUTES, N_SLOTS, SLOT_MINUTES, CensusRecord, TownTable, TravelTimeTable
from .metrics import fdr_adjust, pearson_noncorrelation_test
from .runtime import derive_seed

TO_DEST = "to_dest"
TO_HOME = "to_home"
MIN_BANDWIDTH = SLOT_MINUTES / 2


@dataclass
class FlowProfile:
    raw: np.ndarray  # weighted arrival-slot mass
    travel: np.ndarray  # weighted travel-duration-slot mass
    total_flow: float = 0.0
    bandwidth_minutes: float = MIN_BANDWIDTH
    smoothed: np.ndarray | None = None

    @classmethod
    def empty(cls) -> "FlowProfile":
        return cls(np.zeros(N_SLOTS), np.zeros(N_SLOTS))


ODKey = tuple[str, str, str]  # (origin, destination, direction)


@dataclass
class ODMatrix:
    profiles: dict[ODKey, FlowProfile] = field(default_factory=dict)
    rejects: list[tuple[int, str]] = field(default_factory=list)

    def keys(self) -> list[ODKey]:
        return sorted(self.profiles)

    def total(self, direction: str) -> float:
        return sum(p.total_flow for k, p in self.profiles.items() if k[2] == direction)

    def rows(self):
        """Plot-ready rows: one per (origin, destination, direction, slot)."""
        for key in self.keys():
            p = self.profiles[key]
            sm = p.smoothed if p.smoothed is not None else p.raw
            for s in range(N_SLOTS):
                yield {
                    "origin": key[0],
                    "destination": key[1],
                    "direction": key[2],
                    "slot": s,
                    "raw": float(p.raw[s]),
                    "smoothed": float(sm[s]),
                    "travel": float(p.travel[s]),
                    "total_flow": p.total_flow,
                    "bandwidth_minutes": p.bandwidth_minutes,
                }


def accumulate(
    keys: Sequence[tuple[str, str]],
    weights: np.ndarray,
    probs: Sequence[np.ndarray],
    mode: str = "expected",
    seed: int = 0,
) -> ODMatrix:
    """Sum per-person predicted distributions into O-D profiles.

    ``probs`` holds the four task distributions in target order. Outbound
    mass goes to (home, dest, to_dest), return mass to (dest, home, to_home).
    ``mode="sample"`` adds one seeded draw per person instead of the full
    distribution.
    """
    travel_out, arrive_out, travel_back, arrive_back = probs
    if mode == "sample":
        rng = np.random.default_rng(derive_seed(seed, "disagg-sample"))
        travel_out, arrive_out, travel_back, arrive_back = (_sample_onehot(P, rng) for P in probs)
    elif mode != "expected":
        raise ValueError(f"mode must be 'expected' or 'sample', got {mode!r}")
    groups: dict[ODKey, list[tuple[float, np.ndarray, np.ndarray]]] = {}
    for i, (home, dest) in enumerate(keys):
        w = float(weights[i])
        groups.setdefault((home, dest, TO_DEST), []).append((w, arrive_out[i], travel_out[i]))
        groups.setdefault((dest, home, TO_HOME), []).append((w, arrive_back[i], travel_back[i]))
    odm = ODMatrix()
    for key in sorted(groups):
        items = groups[key]
        w = np.array([it[0] for it in items])
        odm.profiles[key] = FlowProfile(
            _ordered_sum(w[:, None] * np.array([it[1] for it in items])),
            _ordered_sum(w[:, None] * np.array([it[2] for it in items])),
            math.fsum(w),
        )
    return odm


def _ordered_sum(contrib: np.ndarray) -> np.ndarray:
    # sorting each column first makes the float sum independent of record order
    return np.sort(contrib, axis=0).sum(axis=0)


def _sample_onehot(P: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(P, axis=1)
    u = rng.random(P.shape[0])[:, None] * cum[:, -1:]
    idx = np.minimum((cum < u).sum(axis=1), P.shape[1] - 1)
    out = np.zeros_like(P)
    out[np.arange(P.shape[0]), idx] = 1.0
    return out


def disaggregate(
    model,
    census: Sequence[CensusRecord],
    towns: TownTable,
    tt: TravelTimeTable,
    bandwidths: dict[str, float] | float | None = None,
    mode: str = "expected",
    seed: int = 0,
) -> ODMatrix:
    """Predict every census person's trip-time distributions and aggregate them.

    ``model`` needs ``encoders`` and ``predict_proba(X)`` returning the four
    target distributions (a ``modelsel.FittedModel`` with all four tasks).
    Records whose towns or travel times are missing are skipped and listed in
    ``rejects``. When ``bandwidths`` is given each profile is smoothed with the
    bandwidth of its direction.
    """
    table, rejects = featurize.build_census_table(census, towns, tt, model.encoders.schema)
    X = featurize.transform(table, model.encoders)
    probs = model.predict_proba(X)
    if len(probs) != 4:
        raise ValueError("disaggregation needs a model predicting all four targets")
    odm = accumulate(table.keys, table.weights, probs, mode, seed)
    odm.rejects = rejects
    if bandwidths is not None:
        smooth_all(odm, bandwidths)
    return odm


def smooth_all(odm: ODMatrix, bandwidths: dict[str, float] | float) -> ODMatrix:
    for key, prof in odm.profiles.items():
        bw = bandwidths if isinstance(bandwidths, (int, float)) else bandwidths[key[2]]
        prof.bandwidth_minutes = float(bw)
        prof.smoothed = kde_smooth(prof.raw, bw)
    return odm


def circular_kernel(bandwidth_minutes: float) -> np.ndarray:
    """Gaussian weights over slot offsets 0..95 on a 1440-minute circle, summing to 1."""
    if not bandwidth_minutes > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth_minutes}")
    j = np.arange(N_SLOTS)
    # circular offset, so offsets j and 96 - j get bit-identical weights
    delta = SLOT_MINUTES * np.minimum(j, N_SLOTS - j)
    wraps = int(np.ceil(8.0 * bandwidth_minutes / DAY_MINUTES)) + 1
    shifts = DAY_MINUTES * np.arange(-wraps, wraps + 1)
    k = np.exp(-((delta[:, None] + shifts[None, :]) ** 2) / (2.0 * bandwidth_minutes**2)).sum(axis=1)
    return k / k.sum()


def kde_smooth(raw: np.ndarray, bandwidth_minutes: float) -> np.ndarray:
    """Circular Gaussian smoothing of a 96-slot profile; total mass is preserved."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (N_SLOTS,):
        raise ValueError(f"profile must have {N_SLOTS} slots")
    k = circular_kernel(bandwidth_minutes)
    j = np.arange(N_SLOTS)
    circulant = k[(j[:, None] - j[None, :]) % N_SLOTS]
    return circulant @ raw


def default_bandwidth(mean_minute_error: float) -> float:
    """Bandwidth from a task's mean minute error, floored at half a slot."""
    return max(float(mean_minute_error), MIN_BANDWIDTH)


@dataclass(frozen=True)
class ProfileCorrelation:
    key: ODKey
    r: float
    p: float
    q: float  # FDR-adjusted


@dataclass(frozen=True)
class CorrelationReport:
    pairs: tuple[ProfileCorrelation, ...]
    slot_r: np.ndarray  # per-slot cross-sectional correlation over keys
    slot_p: np.ndarray
    slot_q: np.ndarray
    skipped: tuple[ODKey, ...] = ()

    def significant_fraction(self, alpha: float = 0.05) -> float:
        q = np.array([c.q for c in self.pairs])
        q = q[~np.isnan(q)]
        return float(np.mean(q <= alpha)) if q.size else 0.0


def _profile(prof: FlowProfile, which: str) -> np.ndarray:
    if which == "smoothed":
        return prof.smoothed if prof.smoothed is not None else prof.raw
    return prof.raw


def compare_profiles(a: ODMatrix, b: ODMatrix, which: str = "smoothed") -> CorrelationReport:
    """Pearson non-correlation tests between two matrices over their shared keys."""
    shared = sorted(set(a.profiles) & set(b.profiles))
    if not shared:
        raise ValueError("the two O-D matrices share no key")
    rs, ps, skipped = [], [], []
    for key in shared:
        try:
            r, p = pearson_noncorrelation_test(_profile(a.profiles[key], which), _profile(b.profiles[key], which))
        except ValueError:
            r, p = float("nan"), float("nan")
            skipped.append(key)
        rs.append(r)
        ps.append(p)
    ps_arr = np.array(ps)
    q = np.full(len(shared), np.nan)
    ok = ~np.isnan(ps_arr)
    q[ok] = fdr_adjust(ps_arr[ok])
    pairs = tuple(ProfileCorrelation(k, r, p, float(qq)) for k, r, p, qq in zip(shared, rs, ps, q))

    A = np.array([_profile(a.profiles[k], which) for k in shared])
    B = np.array([_profile(b.profiles[k], which) for k in shared])
    slot_r = np.full(N_SLOTS, np.nan)
    slot_p = np.full(N_SLOTS, np.nan)
    if len(shared) >= 3:
        for s in range(N_SLOTS):
            try:
                slot_r[s], slot_p[s] = pearson_noncorrelation_test(A[:, s], B[:, s])
            except ValueError:
                pass
    slot_q = np.full(N_SLOTS, np.nan)
    ok = ~np.isnan(slot_p)
    slot_q[ok] = fdr_adjust(slot_p[ok])
    return CorrelationReport(pairs, slot_r, slot_p, slot_q, tuple(skipped))
