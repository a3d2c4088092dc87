"""Constrained k-means on a summary: candidate centers, exhaustive search, transfer.

Candidate centers are centroids of small sub-multisets of the summary. For
every part of every clustering, some centroid of ``ceil(2/eps)`` sampled
points is within ``1 + eps`` of that part's own centroid cost, so the best
candidate center set, assigned optimally under the constraint, is within
``1 + eps`` of the constrained optimum on the summary.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assignment import Assignment, optimal_assignment
from .constraints import DEFAULT_ENUM_CAP, ConstraintFamily
from .coreset import Coreset, build_movement_coreset
from .geometry import MetricConfig, PointSet, powered_distances
from .stream import StreamConfig, iter_blocks, process_stream

DEFAULT_CANDIDATE_CAP = 10**6
LB_CHUNK = 4096


class CandidateCapError(RuntimeError):
    """Candidate enumeration would exceed its cap."""


@dataclass(frozen=True)
class InabaParams:
    """Sampling parameters: ``sample_size`` draws, failure probability ``failure_prob``."""

    sample_size: int
    failure_prob: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        if int(self.sample_size) < 1:
            raise ValueError("sample_size must be at least 1")
        if not 0 < self.failure_prob <= 1:
            raise ValueError("failure_prob must lie in (0, 1]")


def part_size(eps: float) -> int:
    """Points sampled per cluster for a ``1 + eps`` candidate."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return math.ceil(2.0 / eps - 1e-12)


def inaba_sample(points: PointSet, params: InabaParams, rng=None):
    """Draw ``sample_size`` entries with probability proportional to weight.

    Returns:
        ``(R, mean)`` with ``R`` the ``(sample_size, d)`` sampled locations.
    """
    if len(points) == 0 or points.total_weight <= 0:
        raise ValueError("cannot sample from an empty point set")
    rng = rng if rng is not None else np.random.default_rng(params.rng_seed)
    p = points.weights / points.total_weight
    idx = rng.choice(len(points), size=params.sample_size, p=p)
    R = points.coords[idx]
    return R, R.mean(axis=0)


def inaba_threshold(points: PointSet, params: InabaParams) -> float:
    """Right-hand side of the sampling bound.

    The squared distance between the sample mean and the weighted mean
    exceeds this value with probability at most ``failure_prob``.
    """
    mu = points.weights @ points.coords / points.total_weight
    spread = float(points.weights @ ((points.coords - mu) ** 2).sum(axis=1))
    return spread / (params.failure_prob * params.sample_size * points.total_weight)


def _locations(points: PointSet):
    """Distinct locations with their total weight across colors."""
    locs, inverse = np.unique(points.coords, axis=0, return_inverse=True)
    mass = np.bincount(inverse.reshape(-1), weights=points.weights, minlength=len(locs))
    return locs, mass.astype(np.int64)


def centroid_pool(points: PointSet, eps: float, cap: int = DEFAULT_CANDIDATE_CAP) -> np.ndarray:
    """Distinct candidate centroids for one cluster.

    Uses the centroids of all ``ceil(2/eps)``-multisets of locations, or,
    when fewer, the centroids of all sub-multisets of the expanded summary.
    The second pool contains every part's exact centroid, so it is at least
    as good.

    Raises:
        CandidateCapError: if both pools exceed ``cap``.
    """
    locs, mass = _locations(points)
    s = part_size(eps)
    count_sampled = math.comb(len(locs) + s - 1, s)
    count_exact = math.prod(int(w) + 1 for w in mass) - 1
    if min(count_sampled, count_exact) > cap:
        raise CandidateCapError(
            f"{min(count_sampled, count_exact)} centroids exceed cap {cap}; raise eps or shrink the summary")
    if count_exact < count_sampled:
        counts = np.array(list(itertools.product(*(range(int(w) + 1) for w in mass)))[1:], dtype=float)
        cents = counts @ locs / counts.sum(axis=1, keepdims=True)
    else:
        idx = np.array(list(itertools.combinations_with_replacement(range(len(locs)), s)))
        cents = locs[idx].mean(axis=1)
    return np.unique(cents, axis=0)


def candidate_count(pool_size: int, k: int) -> int:
    return math.comb(pool_size + k - 1, k)


def candidate_centers(points: PointSet, k: int, eps: float, cap: int = DEFAULT_CANDIDATE_CAP,
                      power: int = 2) -> np.ndarray:
    """All candidate center sets, as a ``(count, k, d)`` array.

    For k-means the sets are k-multisets of :func:`centroid_pool`; for
    k-median they are k-multisets of summary locations.
    """
    pool = centroid_pool(points, eps, cap) if power == 2 else _locations(points)[0]
    return pool[_index_sets(len(pool), k, cap)]


def _index_sets(pool_size: int, k: int, cap: int) -> np.ndarray:
    count = candidate_count(pool_size, k)
    if count > cap:
        raise CandidateCapError(f"{count} candidate center sets exceed cap {cap}; raise eps or shrink the summary")
    return np.array(list(itertools.combinations_with_replacement(range(pool_size), k)),
                    dtype=np.int64).reshape(-1, k)


@dataclass(frozen=True, eq=False)
class SolveResult:
    """Outcome of a search.

    Attributes:
        centers: chosen centers (ordinary clusters only for outlier families).
        assignment: optimal assignment of the evaluated points to ``centers``.
        coreset_cost: constrained cost on the summary searched.
        certified_factor: proven bound on ``cost / optimum``.
        derivation: how ``certified_factor`` follows.
        candidates_examined: center sets whose assignment was solved.
        candidates_total: center sets enumerated.
        cost: cost on the evaluated points (equals ``coreset_cost`` for plain searches).
    """

    centers: np.ndarray
    assignment: Assignment
    coreset_cost: float
    certified_factor: float
    derivation: str
    candidates_examined: int
    candidates_total: int
    cost: float
    meta: dict = field(default_factory=dict)


def _lower_bounds(points: PointSet, dist: np.ndarray, index: np.ndarray, free_rows: int) -> np.ndarray:
    """Unconstrained cost of each candidate, minus what free outlier rows could save."""
    out = np.empty(len(index))
    for start in range(0, len(index), LB_CHUNK):
        idx = index[start:start + LB_CHUNK]
        near = dist[:, idx].min(axis=2)  # (entries, chunk)
        lb = points.weights @ near
        if free_rows:
            lb -= free_rows * near.max(axis=0)
        out[start:start + LB_CHUNK] = lb
    return out


def _solve_one(args):
    """Best row order of one center set; a single order when rows are interchangeable."""
    points, centers, family, cfg, cap = args
    orders = [centers]
    if not family.row_symmetric:
        orders = [centers[list(p)] for p in sorted(set(itertools.permutations(range(len(centers)))))]
    best = None
    for c in orders:
        a = optimal_assignment(points, c, family, cfg, cap=cap)
        key = (a.total_cost, tuple(c.ravel()))
        if best is None or key < best[0]:
            best = (key, c, a)
    return best[1], best[2]


def ptas_solve(summary, k: int, eps: float, family: ConstraintFamily,
               cfg: Optional[MetricConfig] = None, cap: int = DEFAULT_CANDIDATE_CAP,
               enum_cap: int = DEFAULT_ENUM_CAP, jobs: int = 1) -> SolveResult:
    """Best candidate center set under the constraint.

    Candidates are visited in order of an unconstrained lower bound and the
    search stops once that bound exceeds the best cost found, so the result
    equals the minimum over all candidates. Ties go to the lexicographically
    smallest centers.

    Args:
        summary: a :class:`Coreset` or :class:`PointSet`.
        k: number of ordinary clusters (outlier rows excluded).

    Raises:
        InfeasibleError: if the family admits nothing.
        CandidateCapError: if the candidate list is too long.
    """
    if isinstance(summary, Coreset):
        cfg = cfg or MetricConfig(summary.power)
        points = summary.points
    else:
        cfg = cfg or MetricConfig()
        points = summary
    family = family.bind(points.color_totals())
    if family.k != k:
        raise ValueError(f"family has {family.k} clusters but k = {k}")
    if len(points) == 0:
        raise ValueError("cannot solve on an empty summary")
    pool = centroid_pool(points, eps, cap) if cfg.power == 2 else _locations(points)[0]
    ordered = not family.row_symmetric
    index = _index_sets(len(pool), k, cap)
    dist = powered_distances(points.coords, pool, cfg.power)
    lb = _lower_bounds(points, dist, index, family.free_rows)
    order = np.argsort(lb, kind="stable")
    best = None
    examined = 0
    jobs = max(1, int(jobs))
    executor = ProcessPoolExecutor(jobs) if jobs > 1 else None
    try:
        pos = 0
        while pos < len(order):
            if best is not None and lb[order[pos]] > best[0] * (1 + 1e-12) + 1e-300:
                break
            batch = order[pos:pos + jobs]
            pos += len(batch)
            tasks = [(points, pool[index[i]], family, cfg, enum_cap) for i in batch]
            results = list(executor.map(_solve_one, tasks)) if executor else [_solve_one(tasks[0])]
            for centers, a in results:
                examined += 1
                key = (a.total_cost, tuple(centers.ravel()))
                if best is None or key < best[:2]:
                    best = (key[0], key[1], centers, a)
    finally:
        if executor:
            executor.shutdown()
    cost, _, centers, a = best
    derivation = (f"candidate centroids of {part_size(eps)}-point samples per cluster; "
                  f"best assignment is within 1+eps of the constrained optimum on the summary")
    factor = 1.0 + eps if cfg.power == 2 else float("nan")
    if cfg.power != 2:
        derivation = "k-median search over summary locations; no 1+eps guarantee"
    return SolveResult(centers.copy(), a, cost, factor, derivation, examined, len(index), cost,
                       {"pool": len(pool), "ordered": ordered})


def solve_with_transfer(points: PointSet, k: int, eps: float, family: ConstraintFamily,
                        cfg: MetricConfig = MetricConfig(), block_size: Optional[int] = None,
                        rng_seed: int = 0, cap: int = DEFAULT_CANDIDATE_CAP,
                        enum_cap: int = DEFAULT_ENUM_CAP, jobs: int = 1) -> SolveResult:
    """Summarize at ``eps/3``, search the summary at ``eps/3``, evaluate on the input.

    With ``block_size`` the summary is built by streaming the input in
    blocks; otherwise it is built offline. The summary is built for
    ``family.n_rows`` clusters so outlier rows count as clusters.

    Returns:
        A :class:`SolveResult` whose ``cost`` and ``assignment`` refer to ``points``.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    family = family.bind(points.color_totals())
    sub_eps = eps / 3.0
    rows = family.n_rows
    if block_size:
        scfg = StreamConfig(max(int(block_size), rows), rows, sub_eps, cfg.power,
                            points.n_colors, rng_seed)
        summary = process_stream(iter_blocks(points), scfg)
    else:
        summary = build_movement_coreset(points, rows, sub_eps, cfg, rng_seed=rng_seed)
    inner = ptas_solve(summary, k, sub_eps, family, cfg, cap, enum_cap, jobs)
    final = optimal_assignment(points, inner.centers, family, cfg, cap=enum_cap)
    factor = (1 + sub_eps) / (1 - sub_eps) if cfg.power == 2 else float("nan")
    derivation = (f"search factor 1+{sub_eps:.6g} on a summary with eps {sub_eps:.6g}; "
                  f"transfer factor (1+e)/(1-e) = {factor:.6g} <= 1+eps")
    return SolveResult(inner.centers, final, inner.coreset_cost, factor, derivation,
                       inner.candidates_examined, inner.candidates_total, final.total_cost,
                       {**inner.meta, "summary_entries": len(summary),
                        "streamed": bool(block_size)})


def smallest_feasible_eps(summary, k: int, cap: int = DEFAULT_CANDIDATE_CAP) -> Optional[float]:
    """Smallest eps whose candidate list fits under ``cap``.

    Returns 0.0 when the exact sub-multiset pool fits (any eps works) and None
    when nothing fits.
    """
    points = summary.points if isinstance(summary, Coreset) else summary
    locs, mass = _locations(points)
    exact = math.prod(int(w) + 1 for w in mass) - 1
    if exact <= cap and candidate_count(exact, k) <= cap:
        return 0.0
    # part size s serves every eps >= 2/s
    best = None
    for s in range(1, 10_000):
        pool = math.comb(len(locs) + s - 1, s)
        if pool > cap or candidate_count(pool, k) > cap:
            break
        best = 2.0 / s
    return best
