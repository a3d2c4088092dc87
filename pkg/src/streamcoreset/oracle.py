"""Brute-force ground truth on tiny instances.

Everything here enumerates partitions of the expanded point set, so the
results are exact up to floating point. Instances above the budget are
refused rather than approximated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .constraints import ConstraintFamily, InfeasibleError
from .geometry import MetricConfig, PointSet, expand, geometric_median

CHUNK = 1 << 15


class OracleBudgetError(RuntimeError):
    """The instance is larger than the oracle is allowed to handle."""


@dataclass(frozen=True)
class OracleBudget:
    max_points: int = 10
    max_k: int = 4
    max_candidates: int = 5_000_000


@dataclass(frozen=True, eq=False)
class OracleResult:
    """Optimal value with a witness.

    Attributes:
        opt: optimal cost (discounted for outlier families), ``inf`` if infeasible.
        labels: row of every expanded point in the witness clustering.
        centers: per-row optimal centers of the witness parts.
        realized_matrix: the witness's realized matrix.
        points: the expanded point set the labels refer to.
    """

    opt: float
    labels: Optional[np.ndarray] = None
    centers: Optional[np.ndarray] = None
    realized_matrix: Optional[np.ndarray] = None
    points: Optional[PointSet] = field(default=None, repr=False)

    @property
    def feasible(self) -> bool:
        return self.labels is not None


def _part_center(coords: np.ndarray, power: int):
    if power == 2:
        mu = coords.mean(axis=0)
        return mu, float(((coords - mu) ** 2).sum())
    if power == 1:
        return geometric_median(coords, tol=1e-10)
    raise ValueError("the oracle supports power 1 and 2 only")


def subset_costs(coords: np.ndarray, power: int):
    """Optimal one-center cost and center of every nonempty subset, by bitmask."""
    coords = np.ascontiguousarray(coords, dtype=float)
    return _subset_costs(coords.tobytes(), coords.shape, power)


@lru_cache(maxsize=64)
def _subset_costs(raw: bytes, shape: tuple, power: int):
    coords = np.frombuffer(raw).reshape(shape)
    n, d = shape
    costs = np.zeros(1 << n)
    centers = np.zeros((1 << n, d))
    seen = {}
    for mask in range(1, 1 << n):
        idx = [i for i in range(n) if mask >> i & 1]
        part = coords[idx]
        # subsets holding the same multiset of locations share a solution
        key = part[np.lexsort(part.T[::-1])].tobytes()
        if key not in seen:
            seen[key] = _part_center(part, power)
        centers[mask], costs[mask] = seen[key]
    costs.setflags(write=False)
    centers.setflags(write=False)
    return costs, centers


def _expanded(points: PointSet, limit: int) -> PointSet:
    if points.total_weight > limit:
        raise OracleBudgetError(f"expanded size {points.total_weight} exceeds oracle limit {limit}")
    return expand(points)


def brute_force_unconstrained_opt(points: PointSet, k: int, cfg: MetricConfig = MetricConfig(),
                                  max_points: int = 12, max_k: int = 4):
    """Optimal unconstrained cost over all partitions into at most ``k`` parts.

    Returns:
        ``(opt, parts)`` where ``parts`` lists index tuples into ``expand(points)``.
    """
    if k > max_k:
        raise OracleBudgetError(f"k = {k} exceeds oracle limit {max_k}")
    x = _expanded(points, max_points)
    n = len(x)
    if n == 0:
        return 0.0, []
    costs, _ = subset_costs(x.coords, cfg.power)

    @lru_cache(maxsize=None)
    def best(mask: int, parts: int):
        # the part holding the lowest remaining point is chosen first
        if parts == 1:
            return costs[mask], (mask,)
        low = mask & -mask
        rest = mask ^ low
        top = (costs[mask], (mask,))
        sub = rest
        while True:
            part = sub | low
            remain = mask ^ part
            if remain:
                tail, split = best(remain, parts - 1)
                val = costs[part] + tail
                if val < top[0]:
                    top = (val, (part,) + split)
            if sub == 0:
                break
            sub = (sub - 1) & rest
        return top

    val, masks = best((1 << n) - 1, k)
    parts = [tuple(i for i in range(n) if m >> i & 1) for m in masks]
    return float(val), parts


def brute_force_constrained_opt(points: PointSet, family: ConstraintFamily,
                                cfg: MetricConfig = MetricConfig(),
                                budget: OracleBudget = OracleBudget()) -> OracleResult:
    """Optimal constrained cost over all labeled partitions of the expanded input.

    Each part is served by its own optimal center (centroid for k-means,
    geometric median for k-median), so partitions determine centers. For
    outlier families the singleton outlier parts cost nothing either way,
    so the raw and discounted optima coincide.

    Returns:
        An :class:`OracleResult`; ``opt`` is ``inf`` when nothing is admitted.
    """
    family = family.bind(points.color_totals())
    rows = family.n_rows
    if family.k > budget.max_k:
        raise OracleBudgetError(f"k = {family.k} exceeds oracle limit {budget.max_k}")
    x = _expanded(points, budget.max_points)
    n = len(x)
    if rows ** n > budget.max_candidates:
        raise OracleBudgetError(f"{rows}^{n} labelings exceed oracle limit {budget.max_candidates}")
    costs, part_centers = subset_costs(x.coords, cfg.power) if n else (np.zeros(1), np.zeros((1, x.dimension)))
    bits = 1 << np.arange(n, dtype=np.int64)
    onehot_color = np.eye(family.n_colors, dtype=np.int64)[x.colors]  # (n, colors)
    admitted = {}
    best_val, best_labels = np.inf, None
    total = rows ** n
    for start in range(0, total, CHUNK):
        codes = np.arange(start, min(total, start + CHUNK), dtype=np.int64)
        labels = (codes[:, None] // rows ** np.arange(n, dtype=np.int64)) % rows  # (m, n)
        member = labels[:, None, :] == np.arange(rows)[None, :, None]  # (m, rows, n)
        masks = member.astype(np.int64) @ bits
        value = costs[masks].sum(axis=1)
        realized = member.astype(np.int64) @ onehot_color  # (m, rows, colors)
        flat = realized.reshape(len(codes), -1)
        uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
        for u in uniq:
            key = tuple(u)
            if key not in admitted:
                admitted[key] = family.admits(u.reshape(rows, -1))
        ok = np.array([admitted[tuple(u)] for u in uniq])
        value = np.where(ok[inverse.reshape(-1)], value, np.inf)
        i = int(np.argmin(value))
        if value[i] < best_val:
            best_val, best_labels = float(value[i]), labels[i].copy()
    if best_labels is None:
        return OracleResult(np.inf, points=x)
    centers = np.empty((rows, x.dimension))
    for r in range(rows):
        mask = int(bits[best_labels == r].sum())
        # an empty part may sit anywhere; use the first point
        centers[r] = part_centers[mask] if mask else x.coords[0]
    realized = np.zeros((rows, family.n_colors), dtype=np.int64)
    np.add.at(realized, (best_labels, x.colors), 1)
    return OracleResult(best_val, best_labels, centers, realized, x)


def constrained_opt_value(points: PointSet, family: ConstraintFamily,
                          cfg: MetricConfig = MetricConfig(), **kw) -> float:
    """Optimal constrained cost.

    Raises:
        InfeasibleError: when the family admits no clustering.
    """
    res = brute_force_constrained_opt(points, family, cfg, **kw)
    if not res.feasible:
        raise InfeasibleError(f"{family.kind} family admits no clustering")
    return res.opt
