"""Size and color constraint families.

A family is a set of ``rows x colors`` integer matrices. Entry ``K[i, j]`` is
the number of unit points of color ``j`` assigned to cluster ``i``, and the
column sums are fixed to the per-color masses of the input. Size constraints
are the one-color case, where each matrix is a column vector of cluster sizes.

Families are symbolic: membership is checked directly and the matrix set is
materialized only by :meth:`ConstraintFamily.enumerate`, under a cap.
"""

from __future__ import annotations

import itertools
import json
import math
from functools import lru_cache
from dataclasses import dataclass, field, replace
from typing import ClassVar, Iterator, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .geometry import PointSet

DEFAULT_ENUM_CAP = 10**6
LOWER_MODES = ("strict", "open-centers")


class InfeasibleError(ValueError):
    """The family admits no matrix for the given masses."""


class EnumerationCapError(RuntimeError):
    """An enumeration would exceed its configured cap."""


def _as_masses(n) -> tuple:
    if np.ndim(n) == 0:
        n = [n]
    masses = tuple(int(x) for x in n)
    if not masses or min(masses) < 0:
        raise ValueError("masses must be a nonempty sequence of nonnegative integers")
    return masses


def _compositions(total: int, parts: int) -> Iterator[tuple]:
    """All ordered ways to write ``total`` as ``parts`` nonnegative integers, lexicographically."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def composition_count(total: int, parts: int) -> int:
    return math.comb(total + parts - 1, parts - 1)


@dataclass(frozen=True)
class ConstraintFamily:
    """Base class. ``k`` counts clusters, ``masses`` the per-color input masses.

    Subclasses implement :meth:`_rows_ok`, the condition on a matrix whose
    shape and column sums are already known to be right.
    """

    k: int
    masses: tuple = (0,)

    kind: ClassVar[str] = "abstract"
    # size families only look at row sums and can be rebound to any coloring
    color_blind: ClassVar[bool] = False

    def __post_init__(self):
        if int(self.k) < 1:
            raise ValueError("k must be at least 1")
        object.__setattr__(self, "masses", _as_masses(self.masses))

    @property
    def n_rows(self) -> int:
        return self.k

    @property
    def n_colors(self) -> int:
        return len(self.masses)

    @property
    def total(self) -> int:
        return sum(self.masses)

    @property
    def free_rows(self) -> int:
        """Leading rows whose assignment cost is not counted (outliers)."""
        return 0

    @property
    def row_symmetric(self) -> bool:
        """True if permuting rows maps the family onto itself."""
        return True

    def bind(self, masses) -> "ConstraintFamily":
        """Return the family for the given per-color masses.

        Raises:
            ValueError: if the masses are incompatible with the family.
        """
        masses = _as_masses(masses)
        if masses == self.masses:
            return self
        if self.color_blind and sum(masses) == self.total:
            return replace(self, masses=masses)
        raise ValueError(f"family masses {self.masses} do not match input masses {masses}")

    def admits(self, K) -> bool:
        K = np.asarray(K)
        if K.ndim == 1 and self.n_colors == 1:
            K = K.reshape(-1, 1)
        if K.shape != (self.n_rows, self.n_colors):
            return False
        if not np.issubdtype(K.dtype, np.integer):
            if not np.all(K == np.round(K)):
                return False
            K = K.astype(np.int64)
        if K.min() < 0 or tuple(int(x) for x in K.sum(axis=0)) != self.masses:
            return False
        return bool(self._rows_ok(K))

    def _rows_ok(self, K: np.ndarray) -> bool:
        raise NotImplementedError

    def enumeration_estimate(self) -> int:
        """Upper bound on the number of matrices :meth:`enumerate` inspects."""
        return math.prod(composition_count(m, self.n_rows) for m in self.masses)

    def enumerate(self, cap: int = DEFAULT_ENUM_CAP) -> Iterator[np.ndarray]:
        """Yield every admitted matrix once, in row-major lexicographic order.

        Raises:
            EnumerationCapError: if more than ``cap`` matrices would be inspected.
        """
        est = self.enumeration_estimate()
        if est > cap:
            raise EnumerationCapError(
                f"enumeration of {self.kind} would inspect {est} matrices (cap {cap})")
        return (K.copy() for K in _admitted(self))

    def _enumerate_sorted(self) -> list:
        columns = [list(_compositions(m, self.n_rows)) for m in self.masses]
        found = []
        for cols in itertools.product(*columns):
            K = np.array(cols, dtype=np.int64).T.reshape(self.n_rows, self.n_colors)
            if self._rows_ok(K):
                found.append(K)
        found.sort(key=lambda a: tuple(a.ravel()))
        return found

    def flow_bounds(self):
        """Row and cell bounds if the family is a box in row sums and cells.

        Returns:
            ``(row_lo, row_hi, cell_cap)`` with ``cell_cap`` possibly None, or
            None when the family is not representable by a single flow.
        """
        return None

    def describe(self) -> dict:
        return {"kind": self.kind, "k": self.k, "masses": list(self.masses)}


@dataclass(frozen=True)
class Unconstrained(ConstraintFamily):
    kind: ClassVar[str] = "unconstrained"
    color_blind: ClassVar[bool] = True

    def _rows_ok(self, K):
        return True

    def flow_bounds(self):
        return (np.zeros(self.k, dtype=np.int64), np.full(self.k, self.total, dtype=np.int64), None)


@dataclass(frozen=True)
class LowerBounds(ConstraintFamily):
    """Cluster sizes at least ``bounds[i]``.

    ``strict`` requires every cluster to reach its bound. ``open-centers``
    also allows a cluster to stay empty.
    """

    bounds: tuple = ()
    mode: str = "strict"
    kind: ClassVar[str] = "lower_bounds"
    color_blind: ClassVar[bool] = True

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "bounds", tuple(int(b) for b in self.bounds))
        if len(self.bounds) != self.k or min(self.bounds) < 0:
            raise ValueError("need one nonnegative lower bound per cluster")
        if self.mode not in LOWER_MODES:
            raise ValueError(f"mode must be one of {LOWER_MODES}, got {self.mode!r}")

    @property
    def row_symmetric(self):
        return len(set(self.bounds)) == 1

    def _rows_ok(self, K):
        sizes = K.sum(axis=1)
        lo = np.array(self.bounds)
        if self.mode == "strict":
            return bool(np.all(sizes >= lo))
        return bool(np.all((sizes == 0) | (sizes >= lo)))

    def flow_bounds(self):
        if self.mode != "strict":
            return None
        return (np.array(self.bounds, dtype=np.int64),
                np.full(self.k, self.total, dtype=np.int64), None)

    def describe(self):
        return {**super().describe(), "bounds": list(self.bounds), "mode": self.mode}


@dataclass(frozen=True)
class UpperBounds(ConstraintFamily):
    bounds: tuple = ()
    kind: ClassVar[str] = "upper_bounds"
    color_blind: ClassVar[bool] = True

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "bounds", tuple(int(b) for b in self.bounds))
        if len(self.bounds) != self.k or min(self.bounds) < 0:
            raise ValueError("need one nonnegative upper bound per cluster")

    @property
    def row_symmetric(self):
        return len(set(self.bounds)) == 1

    def _rows_ok(self, K):
        return bool(np.all(K.sum(axis=1) <= np.array(self.bounds)))

    def flow_bounds(self):
        return (np.zeros(self.k, dtype=np.int64), np.array(self.bounds, dtype=np.int64), None)

    def describe(self):
        return {**super().describe(), "bounds": list(self.bounds)}


@dataclass(frozen=True)
class Outliers(ConstraintFamily):
    """``k`` ordinary clusters plus ``z`` leading singleton clusters.

    Rows ``0..z-1`` of every admitted matrix hold exactly one point each. The
    solvers treat their cost as free (the discounted cost) and report the raw
    cost separately when centers for those rows are supplied.
    """

    z: int = 0
    kind: ClassVar[str] = "outliers"
    color_blind: ClassVar[bool] = True

    def __post_init__(self):
        super().__post_init__()
        if int(self.z) < 0:
            raise ValueError("z must be nonnegative")

    @property
    def n_rows(self):
        return self.k + self.z

    @property
    def free_rows(self):
        return self.z

    def _rows_ok(self, K):
        return bool(np.all(K[: self.z].sum(axis=1) == 1))

    def flow_bounds(self):
        lo = np.zeros(self.n_rows, dtype=np.int64)
        hi = np.full(self.n_rows, self.total, dtype=np.int64)
        lo[: self.z] = 1
        hi[: self.z] = 1
        return lo, hi, None

    def describe(self):
        return {**super().describe(), "z": self.z}


@dataclass(frozen=True)
class Chromatic(ConstraintFamily):
    """At most one point of each color per cluster."""

    kind: ClassVar[str] = "chromatic"

    def _rows_ok(self, K):
        return bool(K.max() <= 1)

    def enumeration_estimate(self):
        return math.prod(math.comb(self.k, m) for m in self.masses)

    def _enumerate_sorted(self):
        columns = []
        for m in self.masses:
            col = []
            for rows in itertools.combinations(range(self.k), m):
                v = np.zeros(self.k, dtype=np.int64)
                v[list(rows)] = 1
                col.append(v)
            columns.append(col)
        found = [np.column_stack(cols) for cols in itertools.product(*columns)]
        found.sort(key=lambda a: tuple(a.ravel()))
        return found

    def flow_bounds(self):
        return (np.zeros(self.k, dtype=np.int64), np.full(self.k, self.total, dtype=np.int64),
                np.ones((self.k, self.n_colors), dtype=np.int64))


@dataclass(frozen=True)
class LDiversity(ConstraintFamily):
    """No color exceeds a ``1/l`` share of a nonempty cluster; empty clusters are allowed."""

    l: float = 1
    kind: ClassVar[str] = "l_diversity"

    def __post_init__(self):
        super().__post_init__()
        if self.l < 1:
            raise ValueError("l must be at least 1")

    def _rows_ok(self, K):
        # l * K_ij <= |row i| is the ratio bound without division
        return bool(np.all(self.l * K <= K.sum(axis=1, keepdims=True)))

    def row_caps(self, size: int) -> int:
        """Largest admissible per-color count in a cluster of the given size."""
        return int(math.floor(size / self.l + 1e-12))

    def describe(self):
        return {**super().describe(), "l": self.l}


@dataclass(frozen=True)
class PerColorCaps(ConstraintFamily):
    caps: tuple = ()
    kind: ClassVar[str] = "per_color_caps"

    def __post_init__(self):
        super().__post_init__()
        caps = np.array(self.caps, dtype=np.int64)
        if caps.shape != (self.k, self.n_colors) or caps.min() < 0:
            raise ValueError("caps must be a nonnegative k x colors matrix")
        object.__setattr__(self, "caps", tuple(tuple(int(x) for x in row) for row in caps))

    @property
    def cap_matrix(self) -> np.ndarray:
        return np.array(self.caps, dtype=np.int64)

    @property
    def row_symmetric(self):
        return len(set(self.caps)) == 1

    def _rows_ok(self, K):
        return bool(np.all(K <= self.cap_matrix))

    def flow_bounds(self):
        return (np.zeros(self.k, dtype=np.int64), np.full(self.k, self.total, dtype=np.int64),
                self.cap_matrix)

    def describe(self):
        return {**super().describe(), "caps": [list(r) for r in self.caps]}


@dataclass(frozen=True)
class MustLink(ConstraintFamily):
    """The first ``linked`` colors are linked components: each sits in a single cluster."""

    linked: int = 0
    kind: ClassVar[str] = "must_link"

    def __post_init__(self):
        super().__post_init__()
        if not 0 <= self.linked <= self.n_colors:
            raise ValueError("linked must be between 0 and the number of colors")

    def _rows_ok(self, K):
        return bool(np.all((K[:, : self.linked] > 0).sum(axis=0) <= 1))

    def describe(self):
        return {**super().describe(), "linked": self.linked}


@dataclass(frozen=True)
class CannotLink(ConstraintFamily):
    """No cluster holds two colors joined by a conflict."""

    conflicts: tuple = ()
    kind: ClassVar[str] = "cannot_link"

    def __post_init__(self):
        super().__post_init__()
        pairs = set()
        for a, b in self.conflicts:
            a, b = int(a), int(b)
            if a == b or not (0 <= a < self.n_colors and 0 <= b < self.n_colors):
                raise ValueError(f"invalid color conflict ({a}, {b})")
            pairs.add((min(a, b), max(a, b)))
        object.__setattr__(self, "conflicts", tuple(sorted(pairs)))

    def _rows_ok(self, K):
        nz = K > 0
        return all(not np.any(nz[:, a] & nz[:, b]) for a, b in self.conflicts)

    def maximal_independent_sets(self) -> list:
        """Maximal conflict-free color sets among colors with positive mass."""
        live = [j for j in range(self.n_colors) if self.masses[j] > 0]
        bad = set(self.conflicts)
        sets = []
        # colors are few, so test every subset from largest to smallest
        for size in range(len(live), 0, -1):
            for combo in itertools.combinations(live, size):
                if any((a, b) in bad for a, b in itertools.combinations(combo, 2)):
                    continue
                s = frozenset(combo)
                if not any(s < t for t in sets):
                    sets.append(s)
        return sorted(sets, key=sorted) or [frozenset()]

    def describe(self):
        return {**super().describe(), "conflicts": [list(p) for p in self.conflicts]}


@dataclass(frozen=True)
class Explicit(ConstraintFamily):
    """A listed set of matrices, stored sorted and deduplicated."""

    matrices: tuple = field(default=())
    kind: ClassVar[str] = "explicit"

    def __post_init__(self):
        mats = [np.asarray(m, dtype=np.int64) for m in self.matrices]
        if not mats:
            raise ValueError("explicit family needs at least one matrix")
        mats = [m.reshape(-1, 1) if m.ndim == 1 else m for m in mats]
        shape = mats[0].shape
        if any(m.shape != shape for m in mats) or shape[0] != self.k:
            raise ValueError("explicit matrices must all be k x colors")
        if min(int(m.min()) for m in mats) < 0:
            raise ValueError("explicit matrices must be nonnegative")
        sums = {tuple(int(x) for x in m.sum(axis=0)) for m in mats}
        if len(sums) != 1:
            raise ValueError("explicit matrices disagree on column sums")
        keys = sorted({tuple(int(x) for x in m.ravel()) for m in mats})
        object.__setattr__(self, "masses", sums.pop())
        object.__setattr__(self, "matrices", tuple(keys))
        super().__post_init__()
        object.__setattr__(self, "_shape", shape)

    @property
    def row_symmetric(self):
        keys = set(self.matrices)
        for key in keys:
            m = np.array(key).reshape(self._shape)
            for perm in itertools.permutations(range(self.k)):
                if tuple(m[list(perm)].ravel()) not in keys:
                    return False
        return True

    def _rows_ok(self, K):
        return tuple(int(x) for x in K.ravel()) in self.matrices

    def enumeration_estimate(self):
        return len(self.matrices)

    def _enumerate_sorted(self):
        return [np.array(key, dtype=np.int64).reshape(self._shape) for key in self.matrices]

    def describe(self):
        return {**super().describe(), "matrices": [np.array(m).reshape(self._shape).tolist()
                                                   for m in self.matrices]}


@lru_cache(maxsize=32)
def _admitted(family: ConstraintFamily) -> tuple:
    # solvers enumerate the same family once per candidate center set
    mats = family._enumerate_sorted()
    for K in mats:
        K.setflags(write=False)
    return tuple(mats)


# -- encoders ----------------------------------------------------------------

def encode_unconstrained(k: int, n) -> Unconstrained:
    return Unconstrained(k, _as_masses(n))


def encode_lower_bounds(bounds: Sequence[int], n, mode: str = "strict") -> LowerBounds:
    """Lower bounds on cluster sizes.

    Raises:
        InfeasibleError: in strict mode when the bounds sum above the total mass.
    """
    fam = LowerBounds(len(bounds), _as_masses(n), tuple(bounds), mode)
    if mode == "strict" and sum(fam.bounds) > fam.total:
        raise InfeasibleError(f"lower bounds sum to {sum(fam.bounds)} > n = {fam.total}")
    return fam


def encode_upper_bounds(bounds: Sequence[int], n) -> UpperBounds:
    fam = UpperBounds(len(bounds), _as_masses(n), tuple(bounds))
    if sum(fam.bounds) < fam.total:
        raise InfeasibleError(f"upper bounds sum to {sum(fam.bounds)} < n = {fam.total}")
    return fam


def encode_outliers(k: int, z: int, n) -> Outliers:
    fam = Outliers(k, _as_masses(n), z)
    if z > fam.total:
        raise InfeasibleError(f"z = {z} exceeds n = {fam.total}")
    return fam


def encode_chromatic(k: int, masses) -> Chromatic:
    fam = Chromatic(k, _as_masses(masses))
    if max(fam.masses) > k:
        raise InfeasibleError(f"a color has mass {max(fam.masses)} > k = {k}")
    return fam


def encode_l_diversity(k: int, l: float, masses) -> LDiversity:
    return LDiversity(k, _as_masses(masses), l)


def encode_per_color_caps(caps, masses) -> PerColorCaps:
    caps = np.asarray(caps, dtype=np.int64)
    fam = PerColorCaps(caps.shape[0], _as_masses(masses), caps)
    if np.any(caps.sum(axis=0) < np.array(fam.masses)):
        raise InfeasibleError("per-color caps cannot hold every point of some color")
    return fam


def encode_explicit(matrices) -> Explicit:
    mats = [np.asarray(m) for m in matrices]
    if not mats:
        raise ValueError("explicit family needs at least one matrix")
    k = mats[0].shape[0]
    return Explicit(k, (0,), tuple(mats))


def _check_links(links, n_points: int) -> list:
    out = []
    for a, b in links:
        a, b = int(a), int(b)
        if not (0 <= a < n_points and 0 <= b < n_points):
            raise ValueError(f"link ({a}, {b}) refers to a missing point")
        out.append((a, b))
    return out


def encode_must_link(links, points: PointSet, k: int):
    """Recolor ``points`` so that every linked component has its own color.

    Non-singleton components get colors ``0..c-1`` and all other points share
    the last color ``c``. Input colors are discarded.

    Returns:
        ``(recolored points, MustLink family)``.
    """
    n = len(points)
    links = _check_links(links, n)
    rows = [a for a, _ in links]
    cols = [b for _, b in links]
    graph = coo_matrix((np.ones(len(links)), (rows, cols)), shape=(n, n))
    _, label = connected_components(graph, directed=False)
    sizes = np.bincount(label, minlength=label.max() + 1 if n else 0)
    colors = np.empty(n, dtype=np.int64)
    fresh = {}
    for idx in range(n):
        comp = label[idx]
        if sizes[comp] > 1:
            colors[idx] = fresh.setdefault(comp, len(fresh))
    c = len(fresh)
    colors[sizes[label] <= 1] = c
    recolored = points.with_colors(colors, c + 1)
    return recolored, MustLink(k, tuple(recolored.color_totals()), c)


def encode_cannot_link(links, points: PointSet, k: int, exact: bool = False):
    """Recolor ``points`` so that linked points never share a color.

    Unlinked points get color 0. Linked points are colored greedily in id
    order with colors from 1 upward, or each gets its own color when
    ``exact`` is set.

    Returns:
        ``(recolored points, CannotLink family)``.
    """
    n = len(points)
    links = _check_links(links, n)
    adj = {i: set() for i in range(n)}
    for a, b in links:
        if a == b:
            raise ValueError(f"point {a} cannot be linked to itself")
        adj[a].add(b)
        adj[b].add(a)
    colors = np.zeros(n, dtype=np.int64)
    next_color = 1
    for i in range(n):
        if not adj[i]:
            continue
        if exact:
            colors[i] = next_color
            next_color += 1
            continue
        taken = {int(colors[j]) for j in adj[i] if colors[j] > 0}
        c = 1
        while c in taken:
            c += 1
        colors[i] = c
        next_color = max(next_color, c + 1)
    recolored = points.with_colors(colors, next_color)
    conflicts = {(int(colors[a]), int(colors[b])) for a, b in links}
    return recolored, CannotLink(k, tuple(recolored.color_totals()), tuple(conflicts))


# -- constraint files ---------------------------------------------------------

def _ints(text: str) -> list:
    return [int(x) for x in text.replace(" ", "").split(",") if x]


def _pairs(text: str) -> list:
    out = []
    for item in text.replace(" ", "").split(","):
        if item:
            a, b = item.split("-")
            out.append((int(a), int(b)))
    return out


def parse_constraint_text(text: str) -> dict:
    """Parse ``key=value`` fields separated by ``;`` or newlines.

    Lines starting with ``#`` are comments. The ``kind`` key is required.
    """
    fields = {}
    for raw in text.replace("\n", ";").split(";"):
        item = raw.strip()
        if not item or item.startswith("#"):
            continue
        if "=" not in item:
            raise ValueError(f"expected key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        if key in fields:
            raise ValueError(f"duplicate key {key!r}")
        fields[key] = value
    if "kind" not in fields:
        raise ValueError("constraint text needs a kind= field")
    return fields


def family_from_text(text: str, points: PointSet, k: int):
    """Build a family for ``points`` from constraint text.

    Returns:
        ``(points, family)``; link constraints return recolored points.

    Raises:
        ValueError: on malformed text.
        InfeasibleError: when the family is provably empty.
    """
    f = parse_constraint_text(text)
    kind = f.pop("kind")
    masses = tuple(int(x) for x in points.color_totals())

    def take(key, default=None):
        if key in f:
            return f.pop(key)
        if default is None:
            raise ValueError(f"{kind} needs a {key}= field")
        return default

    def per_row(key):
        vals = _ints(take(key))
        return vals * k if len(vals) == 1 else vals

    if kind == "unconstrained":
        out = points, encode_unconstrained(k, masses)
    elif kind == "lower_bounds":
        out = points, encode_lower_bounds(per_row("bounds"), masses, take("mode", "strict"))
    elif kind == "upper_bounds":
        out = points, encode_upper_bounds(per_row("bounds"), masses)
    elif kind == "outliers":
        out = points, encode_outliers(k, int(take("z")), masses)
    elif kind == "chromatic":
        out = points, encode_chromatic(k, masses)
    elif kind == "l_diversity":
        out = points, encode_l_diversity(k, float(take("l")), masses)
    elif kind == "per_color_caps":
        out = points, encode_per_color_caps(json.loads(take("caps")), masses)
    elif kind == "explicit":
        fam = encode_explicit(json.loads(take("matrices")))
        out = points, fam.bind(masses)
    elif kind == "must_link":
        out = encode_must_link(_pairs(take("links")), points, k)
    elif kind == "cannot_link":
        exact = take("exact", "false").lower() in ("1", "true", "yes")
        out = encode_cannot_link(_pairs(take("links")), points, k, exact)
    else:
        raise ValueError(f"unknown constraint kind {kind!r}")
    if f:
        raise ValueError(f"unused keys for {kind}: {', '.join(sorted(f))}")
    if out[1].n_rows != k + out[1].free_rows:
        raise ValueError(f"constraint has {out[1].k} clusters but k = {k}")
    return out
