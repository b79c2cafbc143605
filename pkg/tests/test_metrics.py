import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from sklearn.metrics import f1_score
from statsmodels.stats.multitest import multipletests

from tripcast.metrics import (
    confusion,
    fdr_adjust,
    mean_minute_error,
    pearson_noncorrelation_test,
    score_tasks,
    weighted_f1,
    weighted_f1_from_confusion,
)

label_pairs = st.integers(1, 60).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 95), min_size=n, max_size=n),
        st.lists(st.integers(0, 95), min_size=n, max_size=n),
    )
)


def test_weighted_f1_examples():
    assert weighted_f1([0, 0, 1, 2], [0, 1, 1, 2]) == 0.75
    assert weighted_f1([3, 4, 5], [3, 4, 5]) == 1.0
    assert weighted_f1([1, 1, 2], [7, 7, 7]) == 0.0


def test_weighted_f1_hand_computation():
    # class0 F1 = 2/3 (support 2), class1 F1 = 2/3, class2 F1 = 1
    assert weighted_f1([0, 0, 1, 2], [0, 1, 1, 2]) == pytest.approx((2 * 2 / 3 + 2 / 3 + 1) / 4, abs=1e-15)


@given(label_pairs)
@settings(max_examples=200, deadline=None)
def test_weighted_f1_matches_sklearn(pair):
    y, p = pair
    ours = weighted_f1(y, p)
    ref = f1_score(y, p, average="weighted", labels=sorted(set(y)), zero_division=0)
    assert ours == pytest.approx(ref, abs=1e-12)


@given(label_pairs, st.randoms())
@settings(max_examples=100, deadline=None)
def test_weighted_f1_permutation_invariant_and_matches_confusion(pair, rnd):
    y, p = pair
    idx = list(range(len(y)))
    rnd.shuffle(idx)
    ys, ps = [y[i] for i in idx], [p[i] for i in idx]
    assert weighted_f1(ys, ps) == weighted_f1(y, p)
    assert weighted_f1_from_confusion(confusion(y, p)) == weighted_f1(y, p)


def test_confusion_rows_are_true_class():
    cm = confusion([0, 0, 1], [1, 1, 1])
    assert cm[0, 1] == 2 and cm[1, 1] == 1 and cm.sum() == 3
    np.testing.assert_array_equal(cm.sum(axis=1)[:2], [2, 1])


def test_label_validation():
    for bad in (([], []), ([0, 1], [0]), ([96], [0]), ([-1], [0])):
        with pytest.raises(ValueError):
            weighted_f1(*bad)
    with pytest.raises(ValueError):
        mean_minute_error([], [])


def test_mean_minute_error_examples():
    assert mean_minute_error([32], [34]) == 30.0
    assert mean_minute_error([5, 6], [5, 6]) == 0.0
    assert mean_minute_error([0], [95], clock=True) == 15.0
    assert mean_minute_error([0], [95], clock=False) == 1425.0
    # misclassified-only versus all rows
    assert mean_minute_error([32, 10], [34, 10]) == 30.0
    assert mean_minute_error([32, 10], [34, 10], misclassified_only=False) == 15.0


@given(label_pairs)
@settings(max_examples=100, deadline=None)
def test_minute_error_bounds(pair):
    y, p = pair
    assert 0.0 <= mean_minute_error(y, p, clock=True) <= 720.0
    assert 0.0 <= mean_minute_error(y, p, clock=False) <= 1425.0


def test_score_tasks_report():
    Y = np.array([[0, 32, 1, 0], [0, 40, 2, 95], [3, 50, 2, 10]])
    P = np.array([[0, 34, 1, 95], [0, 40, 2, 95], [3, 50, 1, 10]])
    rep = score_tasks(Y, P)
    assert rep.f1[0] == 1.0
    assert rep.minute_error.tolist() == [0.0, 30.0, 15.0, 15.0]
    for t in rep.tasks:
        np.testing.assert_array_equal(t.support, np.bincount(Y[:, rep.tasks.index(t)], minlength=96))
    assert rep.mean_f1 == pytest.approx(rep.f1.mean())


def test_pearson_examples():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert pearson_noncorrelation_test(x, x) == (1.0, 0.0)
    assert pearson_noncorrelation_test(x, -x)[0] == -1.0
    r, p = pearson_noncorrelation_test(x, [1, 2, 3, 5])
    assert r == pytest.approx(0.9827076298239908, abs=1e-12)
    ref = stats.pearsonr(x, [1, 2, 3, 5])
    assert p == pytest.approx(ref.pvalue, rel=1e-9)


@given(st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_pearson_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 100))
    x, y = rng.normal(size=n), rng.normal(size=n)
    r, p = pearson_noncorrelation_test(x, y)
    ref = stats.pearsonr(x, y)
    assert r == pytest.approx(ref.statistic, abs=1e-12)
    assert p == pytest.approx(ref.pvalue, rel=1e-7, abs=1e-12)


def test_pearson_errors():
    with pytest.raises(ValueError):
        pearson_noncorrelation_test([1, 2], [1, 2])
    with pytest.raises(ValueError):
        pearson_noncorrelation_test([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson_noncorrelation_test([1, 2, 3], [1, 2])


def test_fdr_examples():
    np.testing.assert_allclose(fdr_adjust([0.01, 0.02, 0.03, 0.04]), [0.04] * 4, rtol=0, atol=1e-15)
    assert fdr_adjust([0.3]).tolist() == [0.3]
    assert fdr_adjust([]).size == 0
    with pytest.raises(ValueError):
        fdr_adjust([1.2])


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=50))
@settings(max_examples=200, deadline=None)
def test_fdr_properties(ps):
    p = np.array(ps)
    q = fdr_adjust(p)
    ref = multipletests(p, method="fdr_bh")[1]
    np.testing.assert_allclose(q, ref, rtol=1e-12, atol=1e-15)
    assert np.all(q >= p - 1e-15)
    assert np.all(np.diff(q[np.argsort(p, kind="stable")]) >= -1e-15)


@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=50))
@settings(max_examples=200, deadline=None)
def test_fdr_idempotent_on_fixed_points(ps):
    # q is a fixed point exactly when min_{j >= i} q_(j) m / j = q_(i) for every rank i
    q = fdr_adjust(np.array(ps))
    s = np.sort(q)
    m = len(s)
    if all(np.isclose(min(min(s[j] * m / (j + 1) for j in range(i, m)), 1.0), s[i], rtol=1e-12, atol=1e-15) for i in range(m)):
        np.testing.assert_allclose(fdr_adjust(q), q, rtol=1e-12, atol=1e-15)
    c = np.full(m, s[0])
    np.testing.assert_allclose(fdr_adjust(c), c, rtol=1e-12, atol=1e-15)
