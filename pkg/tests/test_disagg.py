from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tripcast import disagg, featurize
from tripcast.disagg import (
    TO_DEST,
    TO_HOME,
    ODMatrix,
    FlowProfile,
    accumulate,
    circular_kernel,
    compare_profiles,
    default_bandwidth,
    disaggregate,
    kde_smooth,
)
from tripcast.domain import CensusRecord

N = 96


def point_probs(n, slots=(5, 32, 6, 70)):
    out = []
    for s in slots:
        P = np.zeros((n, N))
        P[:, s] = 1.0
        out.append(P)
    return out


class FixedModel:
    """Stand-in model returning the same four distributions for every row."""

    def __init__(self, encoders, rows):
        self.encoders = encoders
        self.rows = rows  # four length-96 vectors

    def predict_proba(self, X):
        return [np.tile(r, (X.shape[0], 1)) for r in self.rows]


@pytest.fixture(scope="module")
def encoders(small_world, small_table):
    return featurize.fit(small_world.schema, small_table)


# accumulation


def test_point_mass_single_record():
    odm = accumulate([("A", "B")], np.array([2.0]), point_probs(1))
    out = odm.profiles[("A", "B", TO_DEST)]
    expected = np.zeros(N)
    expected[32] = 2.0
    assert np.array_equal(out.raw, expected)
    assert out.total_flow == 2.0
    back = odm.profiles[("B", "A", TO_HOME)]
    assert back.raw[70] == 2.0 and back.raw.sum() == 2.0
    assert out.travel[5] == 2.0 and back.travel[6] == 2.0


def test_uniform_model_gives_flat_profiles(small_world, encoders):
    model = FixedModel(encoders, [np.full(N, 1 / N)] * 4)
    odm = disaggregate(model, small_world.census, small_world.towns, small_world.travel_times)
    for prof in odm.profiles.values():
        assert np.allclose(prof.raw, prof.total_flow / N, rtol=1e-12, atol=0)


def test_splitting_a_record_changes_nothing():
    rng = np.random.default_rng(0)
    probs = [rng.dirichlet(np.ones(N), size=1) for _ in range(4)]
    one = accumulate([("A", "B")], np.array([2.0]), probs)
    two = accumulate([("A", "B"), ("A", "B")], np.array([1.0, 1.0]), [np.vstack([p, p]) for p in probs])
    for k in one.profiles:
        assert np.allclose(one.profiles[k].raw, two.profiles[k].raw, rtol=1e-14)
        assert one.profiles[k].total_flow == two.profiles[k].total_flow


def test_order_independent():
    rng = np.random.default_rng(1)
    n = 30
    keys = [(f"T{rng.integers(3)}", f"T{rng.integers(3)}") for _ in range(n)]
    w = rng.random(n)
    probs = [rng.dirichlet(np.ones(N), size=n) for _ in range(4)]
    a = accumulate(keys, w, probs)
    perm = rng.permutation(n)
    b = accumulate([keys[i] for i in perm], w[perm], [p[perm] for p in probs])
    assert a.keys() == b.keys()
    for k in a.profiles:
        assert np.array_equal(a.profiles[k].raw, b.profiles[k].raw)


def test_sample_mode_keeps_flow_and_is_seeded():
    rng = np.random.default_rng(2)
    n = 50
    keys = [("A", "B")] * n
    w = rng.random(n)
    probs = [rng.dirichlet(np.ones(N), size=n) for _ in range(4)]
    a = accumulate(keys, w, probs, mode="sample", seed=3)
    b = accumulate(keys, w, probs, mode="sample", seed=3)
    prof = a.profiles[("A", "B", TO_DEST)]
    assert prof.raw.sum() == pytest.approx(w.sum(), rel=1e-12)
    assert np.array_equal(prof.raw, b.profiles[("A", "B", TO_DEST)].raw)
    with pytest.raises(ValueError):
        accumulate(keys, w, probs, mode="argmax")


def test_mass_conservation_and_rejects(small_world, encoders):
    census = list(small_world.census)
    census.append(CensusRecord("ghost", "NOWHERE", census[0].dest_town, "work", dict(census[0].person_attrs), 3.0))
    rng = np.random.default_rng(4)
    model = FixedModel(encoders, [rng.dirichlet(np.ones(N)) for _ in range(4)])
    odm = disaggregate(model, census, small_world.towns, small_world.travel_times, bandwidths=20.0)
    assert len(odm.rejects) == 1
    accepted = sum(c.weight for c in census[:-1])
    for direction in (TO_DEST, TO_HOME):
        assert odm.total(direction) == pytest.approx(accepted, rel=1e-9)
    for p in odm.profiles.values():
        assert p.raw.sum() == pytest.approx(p.total_flow, rel=1e-9)
        assert p.smoothed.sum() == pytest.approx(p.total_flow, rel=1e-9)
        assert np.all(p.raw >= 0) and np.all(p.smoothed >= -1e-15)


def test_rows_are_plot_ready():
    odm = accumulate([("A", "B")], np.array([1.0]), point_probs(1))
    rows = list(odm.rows())
    assert len(rows) == 2 * N
    assert {r["direction"] for r in rows} == {TO_DEST, TO_HOME}
    assert [r["slot"] for r in rows[:N]] == list(range(N))


def test_needs_four_targets(small_world, encoders):
    model = FixedModel(encoders, [np.full(N, 1 / N)] * 2)
    with pytest.raises(ValueError):
        disaggregate(model, small_world.census, small_world.towns, small_world.travel_times)


# smoothing


def test_kernel_is_normalized_and_circular():
    for bw in (0.1, 7.5, 30.0, 300.0, 5000.0):
        k = circular_kernel(bw)
        assert k.sum() == pytest.approx(1.0, abs=1e-15)
        assert np.array_equal(k[1:], k[1:][::-1])


def test_kernel_matches_direct_formula():
    bw = 40.0
    j = np.arange(N)
    delta = 15.0 * j
    wraps = np.arange(-5, 6) * 1440.0
    k = np.exp(-((delta[:, None] + wraps) ** 2) / (2 * bw**2)).sum(axis=1)
    assert np.allclose(circular_kernel(bw), k / k.sum(), rtol=1e-12, atol=1e-300)


@pytest.mark.parametrize("bw", [0.0, -3.0, float("nan")])
def test_nonpositive_bandwidth_rejected(bw):
    with pytest.raises(ValueError):
        kde_smooth(np.ones(N), bw)


def test_point_mass_at_midnight_spreads_symmetrically():
    raw = np.zeros(N)
    raw[0] = 5.0
    sm = kde_smooth(raw, 30.0)
    assert abs(sm[1] - sm[95]) < 1e-9
    assert sm[95] > 0.1
    assert sm.sum() == pytest.approx(5.0, rel=1e-12)


def test_tiny_bandwidth_is_identity():
    raw = np.random.default_rng(0).random(N) * 10
    sm = kde_smooth(raw, 0.1)
    assert np.max(np.abs(sm - raw)) < 1e-6 * raw.sum()


@given(
    raw=arrays(float, N, elements=st.floats(0, 1e6)),
    bw=st.floats(0.5, 2000),
)
@settings(max_examples=80)
def test_smoothing_preserves_mass(raw, bw):
    sm = kde_smooth(raw, bw)
    total = raw.sum()
    assert abs(sm.sum() - total) <= 1e-12 * max(total, 1e-300) * N
    assert np.all(sm >= 0)


@given(a=st.floats(-10, 10), b=st.floats(-10, 10), bw=st.floats(1, 500))
@settings(max_examples=40)
def test_smoothing_is_linear(a, b, bw):
    rng = np.random.default_rng(5)
    x, y = rng.random(N), rng.random(N)
    lhs = kde_smooth(a * x + b * y, bw)
    rhs = a * kde_smooth(x, bw) + b * kde_smooth(y, bw)
    assert np.allclose(lhs, rhs, atol=1e-12 * (abs(a) + abs(b) + 1))


def test_default_bandwidth():
    assert default_bandwidth(42.5) == 42.5
    assert default_bandwidth(8.2) == 8.2
    assert default_bandwidth(0.0) == 7.5
    assert default_bandwidth(3.0) == 7.5


# comparison


def random_odm(rng, keys, smooth=None):
    odm = ODMatrix()
    for k in keys:
        raw = rng.random(N)
        odm.profiles[k] = FlowProfile(raw, np.zeros(N), raw.sum())
    if smooth:
        disagg.smooth_all(odm, smooth)
    return odm


KEYS = [(f"T{i}", f"T{j}", TO_DEST) for i in range(6) for j in range(6)]


def test_self_comparison_is_perfect():
    odm = random_odm(np.random.default_rng(0), KEYS, smooth=20.0)
    rep = compare_profiles(odm, odm)
    assert len(rep.pairs) == len(KEYS)
    assert all(c.r == pytest.approx(1.0, abs=1e-12) for c in rep.pairs)
    assert np.allclose(rep.slot_r, 1.0)
    assert rep.significant_fraction() == 1.0


def test_independent_profiles_rarely_significant():
    # independent noise profiles: the FDR-significant fraction stays near zero
    fractions = []
    for s in range(20):
        rng = np.random.default_rng(100 + s)
        rep = compare_profiles(random_odm(rng, KEYS), random_odm(rng, KEYS), which="raw")
        fractions.append(rep.significant_fraction(0.05))
        ps = np.array([c.p for c in rep.pairs])
        assert np.all((ps >= 0) & (ps <= 1))
    assert np.mean(fractions) < 0.05


def test_only_shared_keys_compared():
    rng = np.random.default_rng(1)
    a = random_odm(rng, KEYS[:10])
    b = random_odm(rng, KEYS[5:20])
    rep = compare_profiles(a, b)
    assert [c.key for c in rep.pairs] == sorted(KEYS[5:10])


def test_no_shared_key_rejected():
    rng = np.random.default_rng(2)
    with pytest.raises(ValueError):
        compare_profiles(random_odm(rng, KEYS[:3]), random_odm(rng, KEYS[3:6]))


def test_constant_profile_is_skipped():
    rng = np.random.default_rng(3)
    a = random_odm(rng, KEYS[:4])
    b = random_odm(rng, KEYS[:4])
    b.profiles[KEYS[0]] = FlowProfile(np.ones(N), np.zeros(N), float(N))
    rep = compare_profiles(a, b, which="raw")
    assert rep.skipped == (KEYS[0],)
    assert np.isnan(rep.pairs[0].r)
