"""Weighted colored point sets and the clustering cost functionals."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

REL_TOL = 1e-9


class GeometryError(ValueError):
    """Raised on malformed point sets, center sets or metric parameters."""


@dataclass(frozen=True)
class MetricConfig:
    """Cost power and ambient dimension.

    ``power=1`` is Euclidean k-median, ``power=2`` is k-means. Other positive
    integers are accepted so the movement bound can be exercised for larger
    exponents, but the solvers only support 1 and 2.
    """

    power: int = 2
    dimension: Optional[int] = None

    def __post_init__(self):
        if int(self.power) != self.power or self.power < 1:
            raise GeometryError(f"power must be a positive integer, got {self.power!r}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PointSet:
    """An immutable multiset of weighted colored points.

    Attributes:
        coords: ``(n, d)`` float array of locations.
        weights: ``(n,)`` positive integer weights.
        colors: ``(n,)`` color ids in ``range(n_colors)``.
        n_colors: number of colors of the instance (1 when uncolored).
    """

    coords: np.ndarray
    weights: np.ndarray
    colors: np.ndarray
    n_colors: int = 1

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float, copy=True)
        if coords.ndim == 1:
            coords = coords.reshape(-1, 1)
        if coords.ndim != 2:
            raise GeometryError("coords must be a 2-d array")
        n, d = coords.shape
        if n and d < 1:
            raise GeometryError("dimension must be at least 1")
        if not np.all(np.isfinite(coords)):
            raise GeometryError("all coordinates must be finite")
        weights = np.array(self.weights, dtype=np.int64, copy=True).reshape(-1)
        colors = np.array(self.colors, dtype=np.int64, copy=True).reshape(-1)
        if weights.shape != (n,) or colors.shape != (n,):
            raise GeometryError("weights and colors must have one entry per point")
        if n and weights.min() < 1:
            raise GeometryError("weights must be positive integers")
        n_colors = int(self.n_colors)
        if n_colors < 1:
            raise GeometryError("n_colors must be at least 1")
        if n and (colors.min() < 0 or colors.max() >= n_colors):
            raise GeometryError(f"color ids must lie in [0, {n_colors})")
        object.__setattr__(self, "coords", _frozen(coords))
        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "colors", _frozen(colors))
        object.__setattr__(self, "n_colors", n_colors)

    @classmethod
    def from_points(
        cls,
        coords,
        weights: Optional[Sequence[int]] = None,
        colors: Optional[Sequence[int]] = None,
        n_colors: Optional[int] = None,
    ) -> "PointSet":
        coords = np.asarray(coords, dtype=float)
        if coords.ndim == 1:
            coords = coords.reshape(-1, 1)
        n = coords.shape[0]
        weights = np.ones(n, dtype=np.int64) if weights is None else weights
        colors = np.zeros(n, dtype=np.int64) if colors is None else colors
        if n_colors is None:
            n_colors = int(np.max(colors)) + 1 if n else 1
        return cls(coords, weights, colors, n_colors)

    @classmethod
    def empty(cls, dimension: int, n_colors: int = 1) -> "PointSet":
        return cls(np.zeros((0, dimension)), np.zeros(0, dtype=np.int64),
                   np.zeros(0, dtype=np.int64), n_colors)

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def dimension(self) -> int:
        return self.coords.shape[1]

    @property
    def total_weight(self) -> int:
        return int(self.weights.sum())

    def color_totals(self) -> np.ndarray:
        """Total weight per color, shape ``(n_colors,)``."""
        return np.bincount(self.colors, weights=self.weights,
                           minlength=self.n_colors).astype(np.int64)

    def subset(self, index) -> "PointSet":
        return PointSet(self.coords[index], self.weights[index], self.colors[index], self.n_colors)

    def with_colors(self, colors, n_colors: int) -> "PointSet":
        return PointSet(self.coords, self.weights, colors, n_colors)

    def merged(self) -> "PointSet":
        """Merge entries sharing (location, color), summing weights.

        The result is sorted by (color, coordinates) so equal inputs give
        identical outputs.
        """
        if len(self) == 0:
            return self
        keys = np.column_stack([self.colors.astype(float), self.coords])
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        weights = np.bincount(inverse.reshape(-1), weights=self.weights).astype(np.int64)
        return PointSet(uniq[:, 1:], weights, uniq[:, 0].astype(np.int64), self.n_colors)

    def concat(self, other: "PointSet") -> "PointSet":
        if self.dimension != other.dimension:
            raise GeometryError("dimension mismatch")
        return PointSet(
            np.vstack([self.coords, other.coords]),
            np.concatenate([self.weights, other.weights]),
            np.concatenate([self.colors, other.colors]),
            max(self.n_colors, other.n_colors),
        )

    def same_entries(self, other: "PointSet") -> bool:
        return (
            self.n_colors == other.n_colors
            and self.coords.shape == other.coords.shape
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.colors, other.colors)
        )


def as_centers(centers, dimension: Optional[int] = None) -> np.ndarray:
    """Coerce a center collection to a ``(k, d)`` float array."""
    c = np.asarray(centers, dtype=float)
    if c.ndim == 1:
        c = c.reshape(-1, 1) if dimension in (None, 1) else c.reshape(1, -1)
    if c.ndim != 2 or c.shape[0] == 0:
        raise GeometryError("center set must be nonempty")
    if dimension is not None and c.shape[1] != dimension:
        raise GeometryError(f"dimension mismatch: centers have d={c.shape[1]}, points d={dimension}")
    if not np.all(np.isfinite(c)):
        raise GeometryError("all center coordinates must be finite")
    return c


def sq_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape ``(len(x), len(centers))``."""
    diff = x[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def powered_distances(x: np.ndarray, centers: np.ndarray, power: int) -> np.ndarray:
    """``dist(x_i, c_j) ** power`` for all pairs."""
    sq = sq_distances(x, centers)
    if power == 2:
        return sq
    return np.sqrt(sq) ** power


def clustering_cost(points: PointSet, centers, cfg: MetricConfig = MetricConfig()) -> float:
    """Weighted cost of assigning every point to its nearest center."""
    c = as_centers(centers, points.dimension if len(points) else None)
    if len(points) == 0:
        return 0.0
    d = powered_distances(points.coords, c, cfg.power)
    return float(np.dot(points.weights, d.min(axis=1)))


def nearest_center(points: PointSet, centers, power: int = 2):
    """Index of the nearest center (lowest index on ties) and its powered distance."""
    c = as_centers(centers, points.dimension)
    d = powered_distances(points.coords, c, power)
    idx = d.argmin(axis=1)
    return idx, d[np.arange(len(points)), idx]


def weighted_mean(points: PointSet) -> np.ndarray:
    """Weight-averaged location of a point set."""
    total = points.total_weight if len(points) else 0
    if total <= 0:
        raise GeometryError("weighted mean of an empty or zero-weight set")
    return points.weights @ points.coords / total


def expand(points: PointSet) -> PointSet:
    """Replace every weight-w entry by w unit-weight copies."""
    reps = points.weights
    return PointSet(
        np.repeat(points.coords, reps, axis=0),
        np.ones(int(reps.sum()), dtype=np.int64),
        np.repeat(points.colors, reps),
        points.n_colors,
    )


def spread(points: PointSet) -> float:
    """Ratio of maximum to minimum pairwise distance over distinct locations."""
    locs = np.unique(points.coords, axis=0)
    if len(locs) < 2:
        raise GeometryError("spread is undefined: all points coincide")
    sq = sq_distances(locs, locs)
    iu = np.triu_indices(len(locs), k=1)
    vals = sq[iu]
    return float(np.sqrt(vals.max() / vals.min()))


def assignment_cost(points: PointSet, centers, flows, cfg: MetricConfig = MetricConfig()) -> float:
    """Cost of an explicit assignment given as ``(entry, center, mass)`` triples.

    Raises:
        GeometryError: if the masses leaving an entry do not equal its weight.
    """
    c = as_centers(centers, points.dimension)
    out = np.zeros(len(points), dtype=np.int64)
    total = 0.0
    for entry, center, mass in flows:
        if mass < 0:
            raise GeometryError("negative mass in assignment")
        out[entry] += mass
        diff = points.coords[entry] - c[center]
        sq = float(diff @ diff)
        total += mass * (sq if cfg.power == 2 else np.sqrt(sq) ** cfg.power)
    if not np.array_equal(out, points.weights):
        raise GeometryError("assignment leaves mass unassigned or over-assigned")
    return total


def distinct_locations(points: PointSet) -> int:
    return len(np.unique(points.coords, axis=0)) if len(points) else 0


def close(a: float, b: float, rel: float = REL_TOL, abs_tol: float = 1e-12) -> bool:
    return abs(a - b) <= max(rel * max(abs(a), abs(b)), abs_tol)


def stack_point_sets(sets: Iterable[PointSet]) -> PointSet:
    sets = list(sets)
    out = sets[0]
    for s in sets[1:]:
        out = out.concat(s)
    return out


def geometric_median(coords: np.ndarray, weights=None, tol: float = 1e-10, max_iter: int = 10_000):
    """Weighted geometric median.

    Every distinct data point is first tested as an anchor: it is optimal
    exactly when the weighted pull of the other points does not exceed its
    own weight. Otherwise the median lies off the data, the objective is
    smooth and strictly convex there, and Weiszfeld iteration is followed by
    damped Newton steps until the gradient vanishes to ``tol``.

    Returns:
        ``(median, cost)`` with ``cost = sum w * ||x - median||``.
    """
    x = np.asarray(coords, dtype=float)
    w = np.ones(len(x)) if weights is None else np.asarray(weights, dtype=float)
    if len(x) == 0:
        raise GeometryError("geometric median of an empty set")
    locs, inverse = np.unique(x, axis=0, return_inverse=True)
    mass = np.bincount(inverse.reshape(-1), weights=w, minlength=len(locs))
    if len(locs) == 1:
        return locs[0].copy(), 0.0

    def cost(z):
        return float(mass @ np.sqrt(((locs - z) ** 2).sum(axis=1)))

    diff = locs[None, :, :] - locs[:, None, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    np.fill_diagonal(dist, np.inf)
    pull = np.linalg.norm(((mass[None, :] / dist)[:, :, None] * diff).sum(axis=1), axis=1)
    ok = pull <= mass * (1 + 1e-12)
    if ok.any():
        i = int(np.flatnonzero(ok)[0])
        return locs[i].copy(), cost(locs[i])

    total = mass.sum()
    z = mass @ locs / total
    eye = np.eye(locs.shape[1])
    for it in range(max_iter):
        d = locs - z
        r = np.sqrt((d ** 2).sum(axis=1))
        if r.min() <= 1e-14:
            # landed on a non-optimal anchor: nudge off it
            z = z + 1e-9 * (1 + np.abs(z).max()) * np.ones_like(z)
            continue
        grad = -(mass / r) @ d
        if np.linalg.norm(grad) <= tol * total:
            break
        inv = mass / r
        weiszfeld = inv @ locs / inv.sum()
        if it < 5:
            z = weiszfeld
            continue
        u = d / r[:, None]
        hess = (inv[:, None, None] * (eye[None] - u[:, :, None] * u[:, None, :])).sum(axis=0)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            z = weiszfeld
            continue
        base, t = cost(z), 1.0
        while t > 1e-12 and cost(z - t * step) > base:
            t *= 0.5
        z_new = z - t * step if t > 1e-12 else weiszfeld
        if np.linalg.norm(z_new - z) <= 1e-15 * max(1.0, np.linalg.norm(z)):
            z = z_new
            break
        z = z_new
    return z, cost(z)
