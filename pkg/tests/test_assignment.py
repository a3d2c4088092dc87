import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from streamcoreset import (
    Chromatic, Coreset, Explicit, LDiversity, MetricConfig, PerColorCaps, PointSet, assign_exact_matrix,
    assignment_cost, clustering_cost, encode_cannot_link, encode_chromatic, encode_lower_bounds,
    encode_must_link, encode_outliers, encode_unconstrained, encode_upper_bounds, expand, optimal_assignment,
    wcost,
)
from streamcoreset.assignment import l_diversity_by_row_sizes, _cost_matrix
from streamcoreset.constraints import InfeasibleError, LowerBounds, Outliers
from streamcoreset.geometry import powered_distances

from strategies import centers_for, point_sets


def labeling_oracle(points, centers, family, power=2):
    """Cheapest admitted labeling of the expanded points at fixed centers."""
    x = expand(points)
    fam = family.bind(points.color_totals())
    cost, _ = _cost_matrix(x, np.asarray(centers, dtype=float), fam, power)
    best = np.inf
    for labels in itertools.product(range(fam.n_rows), repeat=len(x)):
        K = np.zeros((fam.n_rows, fam.n_colors), dtype=np.int64)
        np.add.at(K, (list(labels), x.colors), 1)
        if fam.admits(K):
            best = min(best, float(cost[np.arange(len(x)), list(labels)].sum()))
    return best


def P(xs, **kw):
    return PointSet.from_points(np.asarray(xs, dtype=float).reshape(-1, 1), **kw)


def test_exact_matrix_examples():
    p = P([0, 0, 1, 1])
    for m in (1, 2):
        cfg = MetricConfig(power=m)
        assert assign_exact_matrix(p, [[0.0], [1.0]], [2, 2], cfg).total_cost == 0.0
        assert assign_exact_matrix(p, [[0.0], [1.0]], [3, 1], cfg).total_cost == 1.0
    with pytest.raises(ValueError):
        assign_exact_matrix(p, [[0.0], [1.0]], [3, 2])


def test_exact_matrix_nearest_consistency(rng):
    p = PointSet.from_points(rng.normal(size=(6, 2)), weights=rng.integers(1, 4, 6))
    c = rng.normal(size=(3, 2))
    idx = powered_distances(p.coords, c, 2).argmin(axis=1)
    K = np.bincount(idx, weights=p.weights, minlength=3).astype(int)
    assert assign_exact_matrix(p, c, K).total_cost == pytest.approx(clustering_cost(p, c))


def test_lower_bound_two_sites():
    p = P([0] * 4 + [1] * 4)
    fam = encode_lower_bounds([4, 4], 8)
    assert optimal_assignment(p, [[0.0], [1.0]], fam).total_cost == 0.0
    s = P([0, 1], weights=[4, 4])
    assert wcost(s, [[0.0], [1.0]], fam) == 0.0


def test_open_centers_sub_instance():
    p = P([0, 0, 1, 1])
    fam = encode_lower_bounds([4, 4], 4, mode="open-centers")
    best = min(optimal_assignment(p, [[c], [c + 10]], fam).total_cost for c in np.linspace(0, 1, 101))
    assert best == pytest.approx(1.0)


def test_chromatic_two_by_two():
    p = PointSet.from_points([[0, 0], [1, 0], [0, 0], [1, 0]], colors=[0, 0, 1, 1])
    fam = encode_chromatic(2, [2, 2])
    a = optimal_assignment(p, [[0, 0], [1, 0]], fam)
    assert a.total_cost == 0.0 and np.array_equal(a.realized_matrix, np.ones((2, 2)))


def test_outlier_costs():
    p = P([0, 1, 10])
    fam = encode_outliers(1, 1, 3)
    a = optimal_assignment(p, [[0.5]], fam)
    assert a.total_cost == pytest.approx(0.5) and a.raw_cost is None
    a = optimal_assignment(p, [[10.0], [0.5]], fam)
    assert a.total_cost == pytest.approx(0.5) and a.raw_cost == pytest.approx(0.5)
    everything = encode_outliers(1, 3, 3)
    assert optimal_assignment(p, [[0.0]], everything).total_cost == 0.0


def test_infeasible_assignment_raises():
    p = P([0, 1, 2])
    fam = encode_lower_bounds([2, 2], 4, mode="strict")
    with pytest.raises(ValueError):
        optimal_assignment(p, [[0.0], [1.0]], fam)
    fam = PerColorCaps(2, (3,), np.array([[1], [1]]))
    with pytest.raises(InfeasibleError):
        optimal_assignment(p, [[0.0], [1.0]], fam)


def test_triples_reproduce_cost(rng):
    p = PointSet.from_points(rng.normal(size=(7, 2)), weights=rng.integers(1, 4, 7))
    c = rng.normal(size=(2, 2))
    h = p.total_weight // 2 + 1
    fam = encode_upper_bounds([h, h], p.total_weight)
    a = optimal_assignment(p, c, fam)
    assert assignment_cost(p, c, a.triples()) == pytest.approx(a.total_cost)
    assert np.all(a.realized_matrix.sum(axis=1) <= h)


def test_must_link_keeps_components_together(rng):
    p = P([0, 0.1, 5, 5.1, 2.4])
    q, fam = encode_must_link([(0, 2)], p, 2)
    a = optimal_assignment(q, [[0.0], [5.0]], fam)
    rows = {r for e, r, _ in a.triples() if e in np.flatnonzero(q.colors == 0)}
    assert len(rows) == 1
    assert a.total_cost == pytest.approx(labeling_oracle(q, [[0.0], [5.0]], fam))


def test_cannot_link_separates(rng):
    p = P([0, 0.1, 5, 5.2])
    q, fam = encode_cannot_link([(0, 1), (2, 3)], p, 2)
    a = optimal_assignment(q, [[0.0], [5.0]], fam)
    assert a.total_cost == pytest.approx(labeling_oracle(q, [[0.0], [5.0]], fam))
    # one point of each pair must travel: 0.1 to 5 and 5 to 0
    assert a.total_cost == pytest.approx(4.9**2 + 5.0**2 + 0.2**2)
    q, fam = encode_cannot_link([(0, 1), (2, 3)], p, 2, exact=True)
    a = optimal_assignment(q, [[0.0], [5.0]], fam)
    assert a.total_cost == pytest.approx(labeling_oracle(q, [[0.0], [5.0]], fam))
    assert a.total_cost == pytest.approx(4.9**2 + 5.0**2 + 0.2**2)


def _families(p):
    n = p.total_weight
    masses = tuple(p.color_totals())
    out = [encode_unconstrained(2, masses),
           LowerBounds(2, (n,), (1, max(0, n - 2))),
           LowerBounds(2, (n,), (2, 3), "open-centers"),
           encode_upper_bounds([n - 1, 2], n),
           Outliers(2, (n,), 1),
           LDiversity(2, masses, 2.0)]
    if all(m <= 2 for m in masses):
        out.append(Chromatic(2, masses))
    return out


@given(point_sets(min_n=2, max_n=4, max_colors=2, max_weight=2), st.data())
def test_optimal_assignment_matches_labeling_oracle(p, data):
    if p.total_weight > 7:
        return
    c = centers_for(data.draw, p.dimension, 3)
    for fam in _families(p):
        rows = fam.n_rows
        want = labeling_oracle(p, c[:rows], fam)
        try:
            got = optimal_assignment(p, c[:rows], fam).total_cost
        except (InfeasibleError, ValueError):
            assert want == np.inf, fam.kind
            continue
        assert got == pytest.approx(want, abs=1e-9), fam.kind


@given(point_sets(min_n=1, max_n=5, max_colors=2, max_weight=3), st.data())
def test_splitting_entries_is_neutral(p, data):
    c = centers_for(data.draw, p.dimension, 2)
    fam = encode_upper_bounds([p.total_weight - 1, p.total_weight], p.total_weight)
    lhs = wcost(p, c, fam)
    assert lhs == pytest.approx(wcost(expand(p), c, fam), abs=1e-9)
    fam = LDiversity(2, tuple(p.color_totals()), 1.5)
    try:
        lhs = wcost(p, c, fam)
    except InfeasibleError:
        return
    assert lhs == pytest.approx(wcost(expand(p), c, fam), abs=1e-9)


@given(point_sets(min_n=1, max_n=6, max_weight=3), st.data())
def test_relaxing_bounds_never_costs_more(p, data):
    c = centers_for(data.draw, p.dimension, 2)
    n = p.total_weight
    u = data.draw(st.integers(0, n))
    tight = [u, n]
    loose = [min(n, u + 1), n]
    assert wcost(p, c, encode_upper_bounds(loose, n)) <= wcost(p, c, encode_upper_bounds(tight, n)) + 1e-9
    assert wcost(p, c, encode_unconstrained(2, n)) <= wcost(p, c, encode_upper_bounds(tight, n)) + 1e-9


def test_l_diversity_methods_agree(rng):
    for _ in range(20):
        n = 6
        p = PointSet.from_points(rng.normal(size=(n, 2)), colors=rng.integers(0, 2, n), n_colors=2)
        c = rng.normal(size=(3, 2))
        fam = LDiversity(3, tuple(p.color_totals()), 2.0)
        cost, raw = _cost_matrix(p, c, fam, 2)
        try:
            a = optimal_assignment(p, c, fam, l_diversity_method="enumerate")
        except InfeasibleError:
            with pytest.raises(InfeasibleError):
                l_diversity_by_row_sizes(p, cost, raw, fam)
            continue
        b = l_diversity_by_row_sizes(p, cost, raw, fam)
        assert a.total_cost == pytest.approx(b.total_cost, abs=1e-9)


def test_enumeration_tie_break_is_lexicographic():
    # both clusters sit at the same spot so every admitted matrix costs the same
    p = P([0, 1])
    fam = Explicit(2, (2,), (np.array([[2], [0]]), np.array([[1], [1]])))
    a = optimal_assignment(p, [[0.5], [0.5]], fam)
    assert a.realized_matrix.ravel().tolist() == [1, 1]


def test_wcost_accepts_coreset():
    p = P([0, 1], weights=[4, 4])
    s = Coreset.exact(p, 2, 0.5)
    assert wcost(s, [[0.0], [1.0]], encode_lower_bounds([4, 4], 8)) == 0.0
