import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from streamcoreset import (
    MetricConfig, PointSet, bicriteria_seed, build_movement_coreset, clustering_cost, verify_certificate,
)
from streamcoreset.coreset import (
    Coreset, CoresetError, dump_certificate, dump_coreset, load_certificate, load_coreset, movement_budget,
)
from streamcoreset.oracle import brute_force_unconstrained_opt

from strategies import point_sets


def test_seed_lower_bound_two_pairs():
    p = PointSet.from_points([[0.0], [0.0], [1.0], [1.0]])
    seed = bicriteria_seed(p, 1)
    assert seed.opt_lower_bound <= 1.0


def test_seed_lower_bound_below_opt(rng):
    for trial in range(10):
        p = PointSet.from_points(rng.normal(size=(9, 2)))
        opt, _ = brute_force_unconstrained_opt(p, 3)
        assert bicriteria_seed(p, 3, rng_seed=trial).opt_lower_bound <= opt + 1e-12


def test_movement_budget_formula():
    assert movement_budget(0.5, 2, 16.0) == (0.5 / 4) ** 2 * 16.0


def test_definition_one_random_centers(rng):
    x = np.vstack([rng.normal(size=(15, 2)), rng.normal(size=(15, 2)) + 6])
    p = PointSet.from_points(x)
    s = build_movement_coreset(p, 2, 0.5, rng_seed=1)
    assert verify_certificate(p, s)[0]
    for _ in range(100):
        c = rng.normal(scale=4, size=(2, 2))
        cp = clustering_cost(p, c)
        assert abs(cp - clustering_cost(s.points, c)) <= 0.5 * cp + 1e-12


def test_summary_preserves_color_totals(rng):
    x = rng.normal(size=(40, 2))
    p = PointSet.from_points(x, colors=rng.integers(0, 3, size=40), n_colors=3)
    s = build_movement_coreset(p, 2, 0.3)
    assert np.array_equal(s.points.color_totals(), p.color_totals())
    assert s.total_weight == p.total_weight


def test_perturbed_weight_fails_verification(rng):
    p = PointSet.from_points(rng.normal(size=(20, 2)))
    s = build_movement_coreset(p, 2, 0.5)
    w = s.points.weights.copy()
    w[0] += 1
    bad = Coreset(PointSet(s.points.coords, w, s.points.colors, 1), s.k, s.eps, s.power,
                  s.certificate, s.opt_lower_bound, s.movement_bound)
    ok, msg = verify_certificate(p, bad)
    assert not ok and "mass" in msg


def test_missing_certificate_raises():
    p = PointSet.from_points([[0.0], [1.0]])
    s = Coreset(p, 1, 0.5)
    with pytest.raises(CoresetError):
        verify_certificate(p, s)


def test_identical_points_give_one_entry():
    p = PointSet.from_points(np.ones((7, 2)))
    s = build_movement_coreset(p, 2, 0.5)
    assert len(s) == 1 and s.points.weights[0] == 7
    assert verify_certificate(p, s)[0]


def test_bad_eps_rejected():
    p = PointSet.from_points([[0.0], [1.0]])
    for eps in (0.0, -1.0, 1.5):
        with pytest.raises(ValueError):
            build_movement_coreset(p, 1, eps)


def test_build_is_deterministic(rng):
    p = PointSet.from_points(rng.normal(size=(30, 2)))
    a = build_movement_coreset(p, 2, 0.4, rng_seed=3)
    b = build_movement_coreset(p, 2, 0.4, rng_seed=3)
    assert a.points.same_entries(b.points)


def test_serialization_roundtrip(rng):
    p = PointSet.from_points(rng.normal(size=(25, 2)), colors=rng.integers(0, 2, 25), n_colors=2)
    s = build_movement_coreset(p, 2, 0.4)
    f, g = io.StringIO(), io.StringIO()
    dump_coreset(s, f)
    dump_certificate(s, g)
    f.seek(0)
    g.seek(0)
    back = load_coreset(f, g)
    assert back.points.same_entries(s.points)
    assert back.eps == s.eps and back.k == s.k
    assert verify_certificate(p, back)[0]


@given(point_sets(min_n=2, max_n=12, max_colors=2, max_weight=3),
       st.sampled_from([1, 2]), st.sampled_from([0.2, 0.5, 1.0]))
def test_certificate_always_verifies(p, m, eps):
    s = build_movement_coreset(p, 2, eps, MetricConfig(power=m))
    ok, msg = verify_certificate(p, s)
    assert ok, msg
    assert s.certificate.movement_cost <= s.certificate.budget * (1 + 1e-9)
    assert len(s) <= len(p)
