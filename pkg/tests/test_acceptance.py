"""Acceptance suite.

Each test checks one acceptance criterion at its stated tolerance and prints a
single ``CRITERION n: PASS|FAIL`` line with the measured numbers. Fixed-center
constrained costs on inputs of at most ``ORACLE_N`` unit points come from a
labeling enumeration written here, independent of the flow solver.
"""

import itertools
import math
import time

import numpy as np
import pytest

from streamcoreset import (
    InabaParams, MetricConfig, OracleBudget, PointSet, StreamConfig, StreamState, bicriteria_seed,
    brute_force_constrained_opt, build_movement_coreset, clustering_cost, encode_chromatic, encode_l_diversity,
    encode_lower_bounds, encode_outliers, encode_unconstrained, encode_upper_bounds, expand, inaba_sample, merge,
    optimal_assignment, ptas_solve, solve_with_transfer, verify_certificate, wcost,
)
from streamcoreset.geometry import powered_distances
from streamcoreset.solver import inaba_threshold

ORACLE_N = 10
REL = 1e-9


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} {detail}")
    return emit


# -- shared helpers ----------------------------------------------------------------

class LabelingOracle:
    """Exact fixed-center constrained cost by enumerating labelings of unit points."""

    def __init__(self, points: PointSet, family):
        self.x = expand(points)
        self.family = family.bind(points.color_totals())
        rows, n = self.family.n_rows, len(self.x)
        ncol = self.family.n_colors
        codes = np.arange(rows ** n, dtype=np.int64)
        self.labels = ((codes[:, None] // rows ** np.arange(n, dtype=np.int64)) % rows).astype(np.int8)
        flat = np.zeros((len(codes), rows * ncol), dtype=np.int8)
        for i, c in enumerate(self.x.colors):
            flat[np.arange(len(codes)), self.labels[:, i] * ncol + c] += 1
        uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
        ok = np.array([self.family.admits(u.reshape(rows, -1).astype(np.int64)) for u in uniq])
        self.labels = self.labels[ok[inverse.reshape(-1)]].astype(np.int64)

    def cost(self, centers, power=2):
        c = np.asarray(centers, dtype=float)
        d = powered_distances(self.x.coords, c, power)
        z = self.family.free_rows
        if len(c) == self.family.k and z:
            d = np.hstack([np.zeros((len(self.x), z)), d])
        elif z:
            d[:, :z] = 0.0
        if len(self.labels) == 0:
            return math.inf
        return float(d[np.arange(len(self.x)), self.labels].sum(axis=1).min())


def balanced_colors(n, rng):
    colors = np.arange(n) % 2
    rng.shuffle(colors)
    return colors


def blob_points(n, rng, d=2, spread=4.0):
    k = int(rng.integers(1, 4))
    means = rng.uniform(-spread, spread, size=(k, d))
    return means[rng.integers(0, k, n)] + rng.normal(scale=rng.uniform(0.2, 1.5), size=(n, d))


def random_centers(points, rows, rng):
    lo, hi = points.coords.min(axis=0) - 1, points.coords.max(axis=0) + 1
    return rng.uniform(lo, hi, size=(rows, points.dimension))


def six_families(p, rng):
    """Unconstrained, strict lower bounds, upper bounds, outliers z=1, l-diversity l=2 (chromatic apart)."""
    n = p.total_weight
    masses = tuple(int(m) for m in p.color_totals())
    b = int(rng.integers(1, n // 2 + 1))
    u = int(rng.integers(math.ceil(n / 2), n + 1))
    return {
        "unconstrained": encode_unconstrained(2, masses),
        "lower_bounds": encode_lower_bounds([b, b], n).bind(masses),
        "upper_bounds": encode_upper_bounds([u, u], n).bind(masses),
        "outliers": encode_outliers(2, 1, n).bind(masses),
        "l_diversity": encode_l_diversity(2, 2, masses),
    }


def coreset_gap(p, summary, family, centers, oracle=None, power=2):
    """Relative gap |cost_K(P,C) - wcost_K(S,C)| / cost_K(P,C) (0 when both vanish)."""
    exact = oracle.cost(centers, power) if oracle else optimal_assignment(p, centers, family,
                                                                           MetricConfig(power)).total_cost
    approx = wcost(summary, centers, family)
    if exact == 0.0:
        return 0.0 if approx <= 1e-12 else math.inf
    return abs(exact - approx) / exact


# -- criterion 1 ---------------------------------------------------------------------

def test_criterion_1_movement_bound(report):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst, checked = 0.0, 0
    for trial in range(200):
        n, d = int(rng.integers(1, 13)), int(rng.integers(1, 4))
        m = [1, 2, 3][trial % 3]
        eps = float(rng.uniform(0.01, 1.0))
        x = rng.normal(scale=3, size=(n, d))
        c = rng.normal(scale=3, size=(int(rng.integers(1, 4)), d))
        cfg = MetricConfig(power=m)
        cost_p = clustering_cost(PointSet.from_points(x), c, cfg)
        budget = (eps / (2 * m)) ** m * cost_p
        # displacement directions: random, or straight away from the nearest center
        step = rng.normal(size=(n, d))
        if trial % 2:
            near = c[powered_distances(x, c, 2).argmin(axis=1)]
            away = x - near
            ok = np.linalg.norm(away, axis=1) > 0
            step[ok] = away[ok]
        step /= np.maximum(np.linalg.norm(step, axis=1, keepdims=True), 1e-300)
        share = rng.dirichlet(np.ones(n)) * budget * rng.uniform(0.5, 1.0)
        q = x + step * (share ** (1.0 / m))[:, None]
        moved = float((np.linalg.norm(q - x, axis=1) ** m).sum())
        assert moved <= budget * (1 + 1e-12)
        cost_q = clustering_cost(PointSet.from_points(q), c, cfg)
        gap = abs(cost_p - cost_q) - eps * cost_p
        worst = max(worst, (abs(cost_p - cost_q) / cost_p / eps) if cost_p > 0 else 0.0)
        checked += gap <= REL * max(cost_p, 1e-300)
    elapsed = time.perf_counter() - t0
    ok = checked == 200 and elapsed < 10
    report(1, ok, f"{checked}/200 instances within eps*cost; max |dcost|/(eps*cost) = {worst:.4f}; "
                  f"{elapsed:.2f}s (< 10s)")
    assert ok


# -- criterion 2 ---------------------------------------------------------------------

def test_criterion_2_coreset_guarantee(report):
    rng = np.random.default_rng(2)
    eps, t0 = 0.3, time.perf_counter()
    worst = {}
    failures = []
    certs = 0
    for trial in range(50):
        n = int(rng.integers(3, 21)) * 2
        p = PointSet.from_points(blob_points(n, rng), colors=balanced_colors(n, rng), n_colors=2)
        s2 = build_movement_coreset(p, 2, eps, rng_seed=trial)
        s3 = build_movement_coreset(p, 3, eps, rng_seed=trial)  # outlier rows count as clusters
        certs += verify_certificate(p, s2)[0] and verify_certificate(p, s3)[0]
        fams = six_families(p, rng)
        # chromatic needs every color mass <= k, so it runs on a 4-point companion instance
        q = PointSet.from_points(blob_points(4, rng), colors=[0, 0, 1, 1], n_colors=2)
        sq = build_movement_coreset(q, 2, eps, rng_seed=trial)
        certs += verify_certificate(q, sq)[0]
        runs = [(name, p, s3 if name == "outliers" else s2, fam) for name, fam in fams.items()]
        runs.append(("chromatic", q, sq, encode_chromatic(2, [2, 2])))
        for name, pts, summary, fam in runs:
            small = pts.total_weight <= ORACLE_N
            oracle = LabelingOracle(pts, fam) if small else None
            if small:
                best = brute_force_constrained_opt(pts, fam).centers
            else:
                best = bicriteria_seed(pts, 2, rng_seed=trial).solution
            sets = [random_centers(pts, 2, rng) for _ in range(50)] + [best]
            for c in sets:
                gap = coreset_gap(pts, summary, fam, c, oracle)
                worst[name] = max(worst.get(name, 0.0), gap)
                if gap > eps + REL:
                    failures.append((trial, name, gap))
    elapsed = time.perf_counter() - t0
    ok = not failures and certs == 100 and elapsed < 300
    detail = ", ".join(f"{k} {v:.4f}" for k, v in sorted(worst.items()))
    report(2, ok, f"certificate pairs {certs}/100; worst relative gap per family (bound 0.3): {detail}; "
                  f"{len(failures)} violations; {elapsed:.1f}s (< 300s)")
    assert ok, failures[:5]


# -- criterion 3 ---------------------------------------------------------------------

def _split_instance(rng, adversarial):
    if adversarial:
        # half of each location in either part; bounds of size l make each part alone expensive
        ell = int(rng.choice([4, 6]))
        jitter = float(rng.choice([0.0, 0.02]))
        def part():
            x = np.r_[np.zeros(ell // 2), np.ones(ell // 2)] + rng.normal(scale=jitter, size=ell) * (jitter > 0)
            return PointSet.from_points(x.reshape(-1, 1), colors=np.arange(ell) % 2, n_colors=2)
        return part(), part(), (ell, jitter)
    n1 = int(rng.integers(1, 4)) * 2
    n2 = int(rng.integers(1, (10 - n1) // 2 + 1)) * 2
    d = int(rng.integers(1, 3))
    p1 = PointSet.from_points(blob_points(n1, rng, d), colors=balanced_colors(n1, rng), n_colors=2)
    p2 = PointSet.from_points(blob_points(n2, rng, d) + rng.normal(scale=2, size=d),
                              colors=balanced_colors(n2, rng), n_colors=2)
    return p1, p2, None


def test_criterion_3_mergeability(report):
    rng = np.random.default_rng(3)
    eps, t0 = 0.3, time.perf_counter()
    budget = OracleBudget(max_points=12, max_candidates=1_000_000)
    failures, worst, certs, collapse = [], 0.0, 0, []
    for trial in range(30):
        adversarial = trial < 10
        p1, p2, adv = _split_instance(rng, adversarial)
        ell = adv[0] if adv else None
        p = p1.concat(p2)
        merged = {rows: merge(build_movement_coreset(p1, rows, eps, rng_seed=trial),
                              build_movement_coreset(p2, rows, eps, rng_seed=trial + 100))
                  for rows in (2, 3)}
        certs += all(verify_certificate(p, s)[0] for s in merged.values())
        fams = six_families(p, rng)
        if ell:
            fams["lower_bounds"] = encode_lower_bounds([ell, ell], 2 * ell).bind(p.color_totals())
        for name, fam in fams.items():
            summary = merged[3 if name == "outliers" else 2]
            oracle = LabelingOracle(p, fam)
            best = brute_force_constrained_opt(p, fam, budget=budget).centers
            sets = [random_centers(p, 2, rng) for _ in range(20)] + [best]
            if ell:
                sets.append(np.array([[0.0], [1.0]]))
            for c in sets:
                gap = coreset_gap(p, summary, fam, c, oracle)
                worst = max(worst, gap)
                if gap > eps + REL:
                    failures.append((trial, name, gap))
        if ell:
            # each half alone pays at least (l/2)/4 under open centers; the union costs nothing
            fam = fams["lower_bounds"]
            exact = optimal_assignment(p, [[0.0], [1.0]], fam).total_cost
            union = wcost(merged[2], [[0.0], [1.0]], fam)
            alone = min(optimal_assignment(p1, [[c], [c]], encode_lower_bounds(
                [ell, ell], ell, mode="open-centers")).total_cost for c in np.linspace(-0.5, 1.5, 401))
            collapse.append(abs(union - exact) <= eps * exact + 1e-12 and alone >= ell / 8 - 1e-9
                            and (adv[1] > 0 or union == exact == 0.0))
    elapsed = time.perf_counter() - t0
    ok = not failures and certs == 30 and all(collapse) and elapsed < 120
    report(3, ok, f"merged certificates {certs}/30; worst relative gap {worst:.4f} (bound 0.3); "
                  f"adversarial collapse cases {sum(collapse)}/{len(collapse)}; {elapsed:.1f}s (< 120s)")
    assert ok, failures[:5]


# -- criterion 4 ---------------------------------------------------------------------

def test_criterion_4_worked_values(report):
    p = PointSet.from_points(np.r_[np.zeros(4), np.ones(4)].reshape(-1, 1))
    strict = optimal_assignment(p, [[0.0], [1.0]], encode_lower_bounds([4, 4], 8)).total_cost
    p1 = PointSet.from_points(np.array([0.0, 0.0, 1.0, 1.0]).reshape(-1, 1))
    fam = encode_lower_bounds([4, 4], 4, mode="open-centers")
    one_center = brute_force_constrained_opt(p1, fam).opt
    bound = (4 / 2) * (1 / 4)
    ok = strict == 0.0 and one_center >= bound and math.isclose(one_center, 1.0, rel_tol=1e-12)
    report(4, ok, f"strict (4,4) cost at {{0,1}} = {strict} (expected 0); open-centers P1 optimum = "
                  f"{one_center} >= (l/2)(1/4) = {bound}")
    assert ok


# -- criterion 5 ---------------------------------------------------------------------

def _tiny_family(kind, p, k, rng):
    n = p.total_weight
    masses = tuple(int(m) for m in p.color_totals())
    if kind == "unconstrained":
        return encode_unconstrained(k, masses)
    if kind == "lower_bounds":
        b = [int(rng.integers(0, n // k + 1)) for _ in range(k)]
        return encode_lower_bounds(b, n, mode=rng.choice(["strict", "open-centers"])).bind(masses)
    if kind == "upper_bounds":
        u = [int(rng.integers(math.ceil(n / k), n + 1)) for _ in range(k)]
        return encode_upper_bounds(u, n).bind(masses)
    if kind == "outliers":
        return encode_outliers(k, int(rng.integers(0, 3)), n).bind(masses)
    if kind == "chromatic":
        return encode_chromatic(k, masses)
    return encode_l_diversity(k, float(rng.choice([1.5, 2.0, 3.0])), masses)


KINDS = ["unconstrained", "lower_bounds", "upper_bounds", "outliers", "chromatic", "l_diversity"]


def test_criterion_5_flow_matches_oracle(report):
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    worst, failures, per_kind = 0.0, [], dict.fromkeys(KINDS, 0)
    trial = 0
    while sum(per_kind.values()) < 100 or min(per_kind.values()) < 16:
        kind = min(KINDS, key=lambda kd: (per_kind[kd], KINDS.index(kd)))
        trial += 1
        k = int(rng.integers(1, 4))
        n_entries = int(rng.integers(1, 6))
        colors = rng.integers(0, 2, n_entries)
        weights = rng.integers(1, 3, n_entries)
        if kind == "chromatic":
            weights = np.ones(n_entries, dtype=int)
        if weights.sum() > 8:
            continue
        p = PointSet.from_points(rng.normal(size=(n_entries, 2)).round(2), weights, colors, 2)
        try:
            fam = _tiny_family(kind, p, k, rng)
        except ValueError:
            continue
        if fam.n_rows ** p.total_weight > 5_000_000:
            continue
        res = brute_force_constrained_opt(p, fam)
        if not res.feasible:
            continue
        got = optimal_assignment(p, res.centers, fam).total_cost
        err = abs(got - res.opt)
        worst = max(worst, err)
        per_kind[kind] += 1
        if err > 1e-9:
            failures.append((kind, got, res.opt))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 120
    report(5, ok, f"{sum(per_kind.values())} instances {per_kind}; max |flow - oracle| = {worst:.2e} (tol 1e-9); "
                  f"{elapsed:.1f}s (< 120s)")
    assert ok, failures[:5]


# -- criterion 6 ---------------------------------------------------------------------

def test_criterion_6_inaba_statistics(report):
    rng = np.random.default_rng(6)
    sets = []
    for i in range(5):
        n = int(rng.integers(5, 40))
        x = rng.standard_t(df=3, size=(n, 2)) * (i + 1)
        sets.append(PointSet.from_points(x, weights=rng.integers(1, 10, n)))
    t0 = time.perf_counter()
    rates, ok = [], True
    for ms, delta in ((5, 0.5), (20, 0.2)):
        for i, s in enumerate(sets):
            params = InabaParams(ms, delta)
            mu = s.weights @ s.coords / s.total_weight
            bound = inaba_threshold(s, params)
            draw = np.random.default_rng([6, ms, i])
            bad = 0
            for _ in range(2000):
                _, m = inaba_sample(s, params, draw)
                bad += float(((m - mu) ** 2).sum()) > bound
            rate = bad / 2000
            rates.append((ms, delta, rate))
            ok &= rate <= delta + 0.05
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 30
    worst = {(ms, d): max(r for a, b, r in rates if (a, b) == (ms, d)) for ms, d in ((5, 0.5), (20, 0.2))}
    report(6, ok, f"worst violation rate over 5 sets: (5, 0.5) -> {worst[(5, 0.5)]:.4f}, "
                  f"(20, 0.2) -> {worst[(20, 0.2)]:.4f} (limit delta + 0.05); {elapsed:.1f}s (< 30s)")
    assert ok


# -- criterion 7 ---------------------------------------------------------------------

def test_criterion_7_ptas_ratio(report):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    ratios, failures = [], []
    trial = 0
    while len(ratios) < 20:
        kind = KINDS[trial % 6]
        eps = [0.5, 1.0][trial % 2]
        trial += 1
        size = int(rng.integers(2, 9))
        weights = rng.integers(1, 3, size)
        if kind == "chromatic":
            weights = np.ones(size, dtype=int)
        while weights.sum() > ORACLE_N:
            weights[np.argmax(weights)] -= 1
        s = PointSet.from_points(blob_points(size, rng), weights, balanced_colors(size, rng), 2)
        try:
            fam = _tiny_family(kind, s, 2, rng)
        except ValueError:
            continue
        if fam.n_rows ** s.total_weight > 5_000_000:
            continue
        opt = brute_force_constrained_opt(s, fam)
        if not opt.feasible:
            continue
        res = ptas_solve(s, 2, eps, fam, jobs=1)
        ratio = res.cost / opt.opt if opt.opt > 0 else (1.0 if res.cost <= 1e-12 else math.inf)
        ratios.append((kind, eps, ratio))
        if res.cost > (1 + eps) * opt.opt * (1 + REL) + 1e-12 or res.cost < opt.opt * (1 - REL) - 1e-12:
            failures.append((kind, eps, res.cost, opt.opt))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 300
    worst = max(r for _, _, r in ratios)
    report(7, ok, f"20 instances; worst ptas/OPT = {worst:.6f} (bound 1+eps); none below OPT: "
                  f"{not failures}; {elapsed:.1f}s (< 300s)")
    assert ok, failures


# -- criterion 8 ---------------------------------------------------------------------

def test_criterion_8_transfer(report):
    rng = np.random.default_rng(8)
    eps, t0 = 0.6, time.perf_counter()
    rows_out, failures = [], []
    for trial in range(10):
        kind = KINDS[trial % 6]
        n = 10 if kind != "chromatic" else 4
        p = PointSet.from_points(blob_points(n, rng), colors=balanced_colors(n, rng), n_colors=2)
        fam = _tiny_family(kind, p, 2, rng)
        if kind == "outliers":
            fam = encode_outliers(2, 1, n).bind(p.color_totals())
        opt = brute_force_constrained_opt(p, fam)
        assert opt.feasible
        for block in (None, math.ceil(n / 4)):
            res = solve_with_transfer(p, 2, eps, fam, block_size=block, rng_seed=trial)
            ratio = res.cost / opt.opt if opt.opt > 0 else 1.0
            rows_out.append(ratio)
            if res.cost > (1 + eps) * opt.opt * (1 + REL) + 1e-12:
                failures.append((kind, block, res.cost, opt.opt))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 300
    report(8, ok, f"10 instances x (offline, 4-block stream); worst cost/OPT = {max(rows_out):.6f} "
                  f"(bound 1.6); {elapsed:.1f}s (< 300s)")
    assert ok, failures


# -- criterion 9 ---------------------------------------------------------------------

def test_criterion_9_streaming_scaling(report):
    rng = np.random.default_rng(9)
    means = rng.uniform(-50, 50, size=(5, 2))
    x = means[rng.integers(0, 5, 100_000)] + rng.normal(scale=4.0, size=(100_000, 2))
    cfg = StreamConfig(1000, 5, 0.5)
    state = StreamState(cfg)
    counts = {}
    t0 = time.perf_counter()
    for i, row in enumerate(x, 1):
        state.push(row)
        if i in (1_000, 10_000, 100_000):
            counts[i] = len(state.summary())
    final = state.finalize()
    elapsed = time.perf_counter() - t0
    # configured ceiling k * eps^-d * log2(n)^2, the polylog size form with constant 1
    ceiling = {n: cfg.k * cfg.eps ** -2 * math.log2(n) ** 2 for n in counts}
    ratios = [counts[10_000] / counts[1_000], counts[100_000] / counts[10_000]]
    under = all(counts[n] <= ceiling[n] for n in counts) and len(final) <= ceiling[100_000]
    ok = max(ratios) <= 4 and under and elapsed < 60 and final.total_weight == 100_000
    report(9, ok, f"entries at 1e3/1e4/1e5 = {counts[1_000]}/{counts[10_000]}/{counts[100_000]} "
                  f"(ceilings {ceiling[1_000]:.0f}/{ceiling[10_000]:.0f}/{ceiling[100_000]:.0f}); "
                  f"ratios {ratios[0]:.2f}, {ratios[1]:.2f} (<= 4); final {len(final)}; "
                  f"peak stored {state.peak_entries}; {elapsed:.1f}s (< 60s)")
    assert ok
