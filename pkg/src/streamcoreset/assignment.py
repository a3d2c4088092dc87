"""Optimal constrained assignment of weighted colored points to fixed centers.

A weighted entry of weight ``w`` is treated as ``w`` unit points that may be
split across clusters, so every solve here acts on the expanded point set
without materializing it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .constraints import (
    DEFAULT_ENUM_CAP,
    CannotLink,
    ConstraintFamily,
    EnumerationCapError,
    Explicit,
    InfeasibleError,
    LDiversity,
    LowerBounds,
    MustLink,
    Unconstrained,
    composition_count,
    _compositions,
)
from .coreset import Coreset
from .flow import FlowInfeasible, MinCostFlow
from .geometry import MetricConfig, PointSet, as_centers, powered_distances

TIE_REL = 1e-12


@dataclass(frozen=True, eq=False)
class Assignment:
    """A fractional-point assignment.

    Attributes:
        flows: ``(entries, rows)`` integer matrix of assigned unit masses.
        total_cost: the optimized cost. Rows flagged free (outliers) count 0.
        realized_matrix: ``(rows, colors)`` counts of assigned units.
        raw_cost: cost with every row charged at its own center, or None when
            the free rows have no centers.
        free_rows: number of leading rows excluded from ``total_cost``.
    """

    flows: np.ndarray
    total_cost: float
    realized_matrix: np.ndarray
    raw_cost: Optional[float] = None
    free_rows: int = 0

    def triples(self):
        """``(entry, row, mass)`` for every nonzero flow, in entry order."""
        ent, row = np.nonzero(self.flows)
        return [(int(e), int(r), int(self.flows[e, r])) for e, r in zip(ent, row)]


def _realized(points: PointSet, flows: np.ndarray) -> np.ndarray:
    out = np.zeros((flows.shape[1], points.n_colors), dtype=np.int64)
    np.add.at(out.T, points.colors, flows)
    return out


def _lex_key(matrix: np.ndarray) -> tuple:
    return tuple(int(x) for x in matrix.ravel())


def _better(cost: float, key: tuple, best) -> bool:
    """Strictly better cost, or a tie broken by the smaller matrix key."""
    if best is None:
        return True
    bcost, bkey = best[0], best[1]
    tol = TIE_REL * max(abs(cost), abs(bcost), 1.0)
    if cost < bcost - tol:
        return True
    return abs(cost - bcost) <= tol and key < bkey


def flow_assign(points: PointSet, cost: np.ndarray, row_lo, row_hi, cell_cap=None):
    """Min-cost assignment with row-size bounds and optional per-cell caps.

    Args:
        points: weighted colored entries.
        cost: ``(entries, rows)`` per-unit costs.
        row_lo, row_hi: bounds on the number of units per row.
        cell_cap: optional ``(rows, colors)`` caps on units of a color in a row.

    Returns:
        ``(flows, total)``.

    Raises:
        InfeasibleError: when no assignment meets the bounds.
    """
    n, k = cost.shape
    ell = points.n_colors
    use_cells = cell_cap is not None
    # nodes: entries, [cells], rows, sink
    cell0 = n
    row0 = n + (k * ell if use_cells else 0)
    sink = row0 + k
    g = MinCostFlow(sink + 1)
    arcs = np.empty((n, k), dtype=np.int64)
    for e in range(n):
        w = int(points.weights[e])
        c = int(points.colors[e])
        for r in range(k):
            target = cell0 + r * ell + c if use_cells else row0 + r
            arcs[e, r] = g.add_edge(e, target, w, float(cost[e, r]))
    if use_cells:
        for r in range(k):
            for c in range(ell):
                g.add_edge(cell0 + r * ell + c, row0 + r, int(cell_cap[r, c]), 0.0)
    for r in range(k):
        g.add_edge(row0 + r, sink, int(row_hi[r]), 0.0, lower=int(row_lo[r]))
    supply = [0] * (sink + 1)
    for e in range(n):
        supply[e] = int(points.weights[e])
    supply[sink] = -points.total_weight
    try:
        g.solve(supply)
    except FlowInfeasible as exc:
        raise InfeasibleError(str(exc)) from None
    flows = np.array([[g.flow(arcs[e, r]) for r in range(k)] for e in range(n)],
                     dtype=np.int64).reshape(n, k)
    return flows, float(np.sum(flows * cost))


def _check_k(family: ConstraintFamily, centers: np.ndarray):
    if len(centers) != family.n_rows and not (family.free_rows and len(centers) == family.k):
        raise ValueError(f"family has {family.n_rows} clusters but {len(centers)} centers were given")


def _cost_matrix(points: PointSet, centers: np.ndarray, family: ConstraintFamily, power: int):
    """Optimized and raw per-unit cost matrices over all family rows."""
    z = family.free_rows
    real = powered_distances(points.coords, centers, power)
    if z and len(centers) == family.k:
        opt = np.hstack([np.zeros((len(points), z)), real])
        return opt, None
    if z:
        opt = real.copy()
        opt[:, :z] = 0.0
        return opt, real
    return real, real


def _finish(points, flows, opt_cost, raw_cost_matrix, free_rows) -> Assignment:
    total = float(np.sum(flows * opt_cost))
    raw = None if raw_cost_matrix is None else float(np.sum(flows * raw_cost_matrix))
    return Assignment(flows, total, _realized(points, flows), raw, free_rows)


def assign_exact_matrix(points: PointSet, centers, K, cfg: MetricConfig = MetricConfig()) -> Assignment:
    """Cheapest assignment whose realized matrix is exactly ``K``.

    Each color is an independent transportation problem from its entries to
    the clusters with demands ``K[:, color]``.

    Raises:
        ValueError: if ``K`` has the wrong shape or column sums.
    """
    c = as_centers(centers, points.dimension)
    K = np.asarray(K, dtype=np.int64)
    if K.ndim == 1:
        K = K.reshape(-1, 1)
    if K.shape != (len(c), points.n_colors):
        raise ValueError(f"matrix shape {K.shape} does not match {len(c)} centers x {points.n_colors} colors")
    if not np.array_equal(K.sum(axis=0), points.color_totals()) or K.min() < 0:
        raise ValueError("matrix column sums must equal the per-color masses")
    cost = powered_distances(points.coords, c, cfg.power)
    return _exact(points, cost, K, cost)


def _two_row_transport(weights, cost, first: int) -> np.ndarray:
    """Exact transportation to two rows: fill row 0 by increasing cost difference."""
    order = np.argsort(cost[:, 0] - cost[:, 1], kind="stable")
    take = np.clip(first - (np.cumsum(weights[order]) - weights[order]), 0, weights[order])
    flows = np.zeros(cost.shape, dtype=np.int64)
    flows[order, 0] = take
    flows[:, 1] = weights - flows[:, 0]
    return flows


def _exact(points, cost, K, raw, free_rows=0) -> Assignment:
    flows = np.zeros(cost.shape, dtype=np.int64)
    for color in range(points.n_colors):
        idx = np.flatnonzero(points.colors == color)
        if len(idx) == 0:
            continue
        if cost.shape[1] == 2:
            flows[idx] = _two_row_transport(points.weights[idx], cost[idx], int(K[0, color]))
            continue
        sub = points.subset(idx)
        f, _ = flow_assign(sub, cost[idx], K[:, color], K[:, color])
        flows[idx] = f
    return _finish(points, flows, cost, raw, free_rows)


def _nearest(points, cost, raw, free_rows=0) -> Assignment:
    idx = cost.argmin(axis=1)
    flows = np.zeros(cost.shape, dtype=np.int64)
    flows[np.arange(len(points)), idx] = points.weights
    return _finish(points, flows, cost, raw, free_rows)


def _open_centers(points, cost, raw, family: LowerBounds) -> Assignment:
    best = None
    k, n = family.k, family.total
    for open_rows in itertools.product((0, 1), repeat=k):
        lo = np.array([b if o else 0 for b, o in zip(family.bounds, open_rows)])
        hi = np.array([n if o else 0 for o in open_rows])
        if lo.sum() > n or hi.sum() < n:
            continue
        try:
            flows, total = flow_assign(points, cost, lo, hi)
        except InfeasibleError:
            continue
        a = _finish(points, flows, cost, raw, 0)
        key = _lex_key(a.realized_matrix)
        if _better(a.total_cost, key, best):
            best = (a.total_cost, key, a)
    if best is None:
        raise InfeasibleError("no admissible set of open clusters")
    return best[2]


def _two_row_curves(points, cost) -> list:
    """Per color, the exact cost of sending ``a`` units to row 0, for every ``a``."""
    curves = []
    for color in range(points.n_colors):
        idx = np.flatnonzero(points.colors == color)
        w = points.weights[idx]
        diff = cost[idx, 0] - cost[idx, 1]
        order = np.argsort(diff, kind="stable")
        units = np.repeat(diff[order], w[order])
        base = float(w @ cost[idx, 1])
        curves.append(base + np.concatenate([[0.0], np.cumsum(units)]))
    return curves


def _enumerated(points, cost, raw, family: ConstraintFamily, cap: int) -> Assignment:
    mats = list(family.enumerate(cap))
    if not mats:
        raise InfeasibleError(f"{family.kind} family admits no matrix")
    if cost.shape[1] == 2:
        # score every matrix at once; matrices arrive in lexicographic order
        curves = _two_row_curves(points, cost)
        first = np.array([K[0] for K in mats])
        totals = sum(curves[j][first[:, j]] for j in range(points.n_colors))
        low = totals.min()
        pick = int(np.flatnonzero(totals <= low + TIE_REL * max(abs(low), 1.0))[0])
        return _exact(points, cost, mats[pick], raw, family.free_rows)
    best = None
    for K in mats:
        a = _exact(points, cost, K, raw, family.free_rows)
        key = _lex_key(a.realized_matrix)
        if _better(a.total_cost, key, best):
            best = (a.total_cost, key, a)
    return best[2]


def l_diversity_by_row_sizes(points, cost, raw, family: LDiversity, cap: int = DEFAULT_ENUM_CAP) -> Assignment:
    """l-diversity via cluster-size profiles.

    For each composition of the total into cluster sizes, per-color counts in
    a cluster of size ``s`` are capped at ``floor(s / l)`` and the rest is a
    single flow with fixed row sums.
    """
    n, k = family.total, family.k
    if composition_count(n, k) > cap:
        raise EnumerationCapError(f"{composition_count(n, k)} size profiles exceed cap {cap}")
    best = None
    for sizes in _compositions(n, k):
        caps = np.array([[family.row_caps(s)] * family.n_colors for s in sizes], dtype=np.int64)
        if np.any(caps.sum(axis=0) < np.array(family.masses)):
            continue
        try:
            flows, _ = flow_assign(points, cost, np.array(sizes), np.array(sizes), caps)
        except InfeasibleError:
            continue
        a = _finish(points, flows, cost, raw, 0)
        key = _lex_key(a.realized_matrix)
        if _better(a.total_cost, key, best):
            best = (a.total_cost, key, a)
    if best is None:
        raise InfeasibleError("l-diversity family admits no matrix")
    return best[2]


def _must_link(points, cost, raw, family: MustLink) -> Assignment:
    flows = np.zeros(cost.shape, dtype=np.int64)
    for color in range(family.n_colors):
        idx = np.flatnonzero(points.colors == color)
        if len(idx) == 0:
            continue
        if color < family.linked:
            # a whole component goes to its cheapest cluster
            row = int(np.argmin(points.weights[idx] @ cost[idx]))
            flows[idx, row] = points.weights[idx]
        else:
            flows[idx, cost[idx].argmin(axis=1)] = points.weights[idx]
    return _finish(points, flows, cost, raw, 0)


def _cannot_link(points, cost, raw, family: CannotLink) -> Assignment:
    sets = family.maximal_independent_sets()
    best = None
    for choice in itertools.product(sets, repeat=family.k):
        allowed = np.array([[c in s for s in choice] for c in range(family.n_colors)])
        if not np.all(allowed[points.colors].any(axis=1)):
            continue
        masked = np.where(allowed[points.colors], cost, np.inf)
        flows = np.zeros(cost.shape, dtype=np.int64)
        flows[np.arange(len(points)), masked.argmin(axis=1)] = points.weights
        a = _finish(points, flows, cost, raw, 0)
        key = _lex_key(a.realized_matrix)
        if _better(a.total_cost, key, best):
            best = (a.total_cost, key, a)
    if best is None:
        raise InfeasibleError("cannot-link family admits no assignment")
    return best[2]


def optimal_assignment(points: PointSet, centers, family: ConstraintFamily,
                       cfg: MetricConfig = MetricConfig(), cap: int = DEFAULT_ENUM_CAP,
                       l_diversity_method: str = "auto") -> Assignment:
    """Cheapest assignment whose realized matrix the family admits.

    For outlier families ``centers`` holds either the ``k`` ordinary centers
    or ``z + k`` centers with the outlier rows first.

    Args:
        l_diversity_method: ``enumerate``, ``row_sizes``, or ``auto`` (enumerate
            when under the cap, otherwise row sizes).

    Raises:
        InfeasibleError: if no admitted matrix can be realized.
        EnumerationCapError: if an enumeration path exceeds ``cap``.
    """
    c = as_centers(centers, points.dimension)
    family = family.bind(points.color_totals())
    _check_k(family, c)
    cost, raw = _cost_matrix(points, c, family, cfg.power)
    if len(points) == 0:
        flows = np.zeros((0, family.n_rows), dtype=np.int64)
        if not family.admits(np.zeros((family.n_rows, family.n_colors), dtype=np.int64)):
            raise InfeasibleError("family does not admit the empty assignment")
        return _finish(points, flows, cost, raw, family.free_rows)
    if isinstance(family, Unconstrained):
        return _nearest(points, cost, raw)
    if isinstance(family, LowerBounds) and family.mode == "open-centers":
        return _open_centers(points, cost, raw, family)
    if isinstance(family, MustLink):
        return _must_link(points, cost, raw, family)
    if isinstance(family, CannotLink):
        return _cannot_link(points, cost, raw, family)
    if isinstance(family, LDiversity):
        method = l_diversity_method
        if method == "auto":
            method = "enumerate" if family.enumeration_estimate() <= cap else "row_sizes"
        if method == "row_sizes":
            return l_diversity_by_row_sizes(points, cost, raw, family, cap)
        if method != "enumerate":
            raise ValueError(f"unknown l-diversity method {method!r}")
        return _enumerated(points, cost, raw, family, cap)
    if isinstance(family, Explicit):
        return _enumerated(points, cost, raw, family, cap)
    bounds = family.flow_bounds()
    if bounds is None:
        return _enumerated(points, cost, raw, family, cap)
    flows, _ = flow_assign(points, cost, *bounds)
    return _finish(points, flows, cost, raw, family.free_rows)


def wcost(summary, centers, family: ConstraintFamily, cfg: Optional[MetricConfig] = None, **kw) -> float:
    """Constrained cost of a weighted summary, each weight unit assignable on its own."""
    if isinstance(summary, Coreset):
        cfg = cfg or MetricConfig(summary.power)
        summary = summary.points
    return optimal_assignment(summary, centers, family, cfg or MetricConfig(), **kw).total_cost
