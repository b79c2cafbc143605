import numpy as np
import pytest
from scipy.stats import chi2_contingency

from tripcast import featurize, synthgen
from tripcast.synthgen import Archetype, WorldParams, generate


def test_same_seed_same_world():
    a = generate(synthgen.fixture("easy", n=300, seed=7))
    b = generate(synthgen.fixture("easy", n=300, seed=7))
    assert a.trips == b.trips and a.census == b.census
    assert np.array_equal(a.truth.raw_times, b.truth.raw_times)
    c = generate(synthgen.fixture("easy", n=300, seed=8))
    assert a.trips != c.trips


def test_degenerate_world_has_one_target_quadruple():
    arch = (Archetype("only", 1.0, "office", False, 517.5, 472.5, 0.5, (30, 40)),)
    w = generate(WorldParams(n_towns=1, n_persons=200, n_census=5, archetypes=arch, rho=0.0, sigma_minutes=0.0))
    table = featurize.build_table(w.trips, w.towns, w.travel_times, w.schema)
    assert len({tuple(r) for r in table.Y.tolist()}) == 1


@pytest.mark.parametrize("purpose", ["work", "study"])
def test_archetype_mean_arrival_matches_plan(purpose):
    p = WorldParams(n_persons=4000, sigma_minutes=20.0, purpose=purpose, seed=3)
    w = generate(p)
    arrive = w.truth.raw_times[:, 1]
    for i, a in enumerate(p.archetype_set):
        mask = w.truth.archetype == i
        n = mask.sum()
        assert n > 100
        # rounding to 0.01 min adds at most 0.005 to the sample mean
        assert abs(arrive[mask].mean() - a.arrive) < 2 * p.sigma_minutes / np.sqrt(n) + 0.005


def test_noise_targets_independent_of_features():
    w = generate(synthgen.fixture("noise", seed=2))
    table = featurize.build_table(w.trips, w.towns, w.travel_times, w.schema)
    Yq = [np.searchsorted(np.quantile(y, [0.25, 0.5, 0.75]), y, side="right") for y in table.Y.T]
    pvals = []
    for f, col in zip(table.schema.features, table.columns):
        if f.numeric:
            cuts = np.unique(np.quantile(col, [0.25, 0.5, 0.75]))
            x = np.searchsorted(cuts, col, side="right")
        else:
            x = np.unique(col, return_inverse=True)[1]
        if len(np.unique(x)) < 2:
            continue
        for yq in Yq:
            ct = np.zeros((x.max() + 1, yq.max() + 1))
            np.add.at(ct, (x, yq), 1)
            ct = ct[ct.sum(axis=1) > 0][:, ct.sum(axis=0) > 0]
            pvals.append(chi2_contingency(ct)[1])
    assert len(pvals) >= 20
    assert min(pvals) > 0.01 / len(pvals)


def test_generated_tables_are_valid():
    for name in synthgen.FIXTURES:
        w = generate(synthgen.fixture(name, n=200, seed=1, n_census=20))
        table = featurize.build_table(w.trips, w.towns, w.travel_times, w.schema)
        assert len(table) == 200
        assert table.Y.min() >= 0 and table.Y.max() < 96
        assert np.all(table.weights > 0)
        _, rejects = featurize.build_census_table(w.census, w.towns, w.travel_times, w.schema)
        assert rejects == []


def test_shared_latent_couples_targets():
    w = generate(synthgen.fixture("shared-latent", n=2000, seed=0))
    raw = w.truth.raw_times
    lat = w.truth.latent
    assert np.all(np.abs(lat) <= 1)
    # residual arrival after the archetype mean tracks the latent
    arch = np.array([a.arrive for a in w.params.archetype_set])[w.truth.archetype]
    assert np.corrcoef(raw[:, 1] - arch, lat)[0, 1] > 0.9


def test_adversarial_city_reverses_schedule():
    w = generate(synthgen.fixture("adversarial-city", n=2000, seed=0))
    surveys = np.array([t.survey_id for t in w.trips])
    means = np.array([a.arrive for a in w.params.archetype_set])
    inv = surveys == "S3"
    assert np.allclose(w.truth.arrive_mean[inv], means[::-1][w.truth.archetype[inv]])
    assert np.allclose(w.truth.arrive_mean[~inv], means[w.truth.archetype[~inv]])


@pytest.mark.parametrize(
    "kw",
    [dict(rho=1.5), dict(rho=-0.1), dict(sigma_minutes=-1.0), dict(n_towns=0), dict(signal="chaos"), dict(inverted_survey=2)],
)
def test_invalid_params_rejected(kw):
    with pytest.raises(ValueError):
        WorldParams(**kw)


def test_unknown_fixture():
    with pytest.raises(KeyError):
        synthgen.fixture("nope")
