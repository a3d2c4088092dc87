"""Insertion-only streaming by merge-and-reduce over movement-based coresets.

Movement composes: if one map moves the input by at most ``M1`` (sum of
weight * dist^m) and a second map moves the result by at most ``M2``, the
composed map moves the input by at most ``(M1^(1/m) + M2^(1/m))^m``
(Minkowski). Merging disjoint summaries adds movements and, because opt is
superadditive over disjoint inputs, also adds opt lower bounds. Those two
facts let every bucket carry a certified movement bound relative to the raw
points it summarizes.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional, TextIO

import numpy as np

from .coreset import (
    Coreset,
    CoresetError,
    LatticeGeometry,
    MovementCertificate,
    build_movement_coreset,
    dump_coreset,
    load_coreset,
    movement_budget,
)
from .geometry import MetricConfig, PointSet

LEVEL0_SHARE = 0.9
UNIT_MARGIN = 0.8


class StreamError(ValueError):
    """Raised on malformed stream records or inconsistent stream state."""


def compose_movement(first: float, second: float, power: int) -> float:
    """Upper bound on the movement of two maps applied in sequence."""
    return (first ** (1.0 / power) + second ** (1.0 / power)) ** power


def certified_eps(coreset: Coreset) -> float:
    """Smallest eps for which the carried movement bound fits ``(eps/2m)^m * lb``."""
    if coreset.movement_bound <= 0.0:
        return 0.0
    if coreset.opt_lower_bound <= 0.0:
        return math.inf
    m = coreset.power
    return 2 * m * (coreset.movement_bound / coreset.opt_lower_bound) ** (1.0 / m)


def merge(s1: Coreset, s2: Coreset) -> Coreset:
    """Union of two summaries with weights added on coinciding entries.

    If both carry certificates the result carries one for the concatenated
    inputs (first input's entries, then the second's).
    """
    if len(s1) == 0:
        return s2
    if len(s2) == 0:
        return s1
    p1, p2 = s1.points, s2.points
    if p1.dimension != p2.dimension or s1.power != s2.power or p1.n_colors != p2.n_colors:
        raise CoresetError("cannot merge coresets with different d, m or color count")
    both = p1.concat(p2)
    keys = np.column_stack([both.colors.astype(float), both.coords])
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    weights = np.bincount(inverse, weights=both.weights).astype(np.int64)
    points = PointSet(uniq[:, 1:], weights, uniq[:, 0].astype(np.int64), p1.n_colors)
    eps = max(s1.eps, s2.eps)
    lower = s1.opt_lower_bound + s2.opt_lower_bound
    moved = s1.movement_bound + s2.movement_bound
    cert = None
    if s1.certificate is not None and s2.certificate is not None:
        c1, c2 = s1.certificate, s2.certificate
        mapping = np.concatenate([inverse[c1.mapping], inverse[len(p1) + c2.mapping]])
        cert = MovementCertificate(mapping, c1.movement_cost + c2.movement_cost, lower,
                                   movement_budget(eps, s1.power, lower))
    return Coreset(points, max(s1.k, s2.k), eps, s1.power, cert, lower, moved,
                   meta={"merged": True})


def reduce(coreset: Coreset, target_eps: float, rng_seed: int = 0,
           lattice_unit: Optional[float] = None, geometry=None) -> Coreset:
    """Re-summarize a coreset with an extra movement budget of ``target_eps``.

    The new build is charged against the coreset's carried opt lower bound,
    so total and per-color weights are preserved and the accumulated error
    grows by at most ``target_eps``.
    """
    if len(coreset) == 0:
        return coreset
    inner = build_movement_coreset(
        coreset.points, coreset.k, target_eps, MetricConfig(coreset.power), rng_seed,
        opt_lower_bound=coreset.opt_lower_bound if coreset.opt_lower_bound > 0 else None,
        lattice_unit=lattice_unit, geometry=geometry,
    )
    if inner.meta.get("degenerate") and coreset.opt_lower_bound > 0:
        inner = replace(inner, opt_lower_bound=coreset.opt_lower_bound)
    step = inner.certificate.movement_cost
    moved = compose_movement(coreset.movement_bound, step, coreset.power)
    lower = max(coreset.opt_lower_bound, inner.opt_lower_bound)
    eps = min(1.0, coreset.eps + target_eps) if coreset.movement_bound > 0 else target_eps
    cert = None
    if coreset.certificate is not None:
        old = coreset.certificate
        cert = MovementCertificate(inner.certificate.mapping[old.mapping],
                                   compose_movement(old.movement_cost, step, coreset.power),
                                   lower, movement_budget(eps, coreset.power, lower))
    meta = dict(inner.meta)
    meta["reduced_from"] = len(coreset)
    return Coreset(inner.points, coreset.k, eps, coreset.power, cert, lower, moved, meta)


@dataclass(frozen=True)
class StreamConfig:
    """Merge-and-reduce parameters.

    Level 0 (block summaries) gets ``LEVEL0_SHARE`` of ``eps``; level
    ``j >= 1`` gets ``(1 - LEVEL0_SHARE) * eps * 6 / (pi^2 j^2)``. The shares
    sum to ``eps`` over infinitely many levels, so the stream length need not
    be known in advance.
    """

    block_size: int
    k: int
    eps: float
    power: int = 2
    n_colors: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if self.block_size < max(1, self.k):
            raise StreamError("block size must be at least k")
        if not (0.0 < self.eps <= 1.0):
            raise StreamError("eps must lie in (0, 1]")

    def level_eps(self, level: int) -> float:
        if level == 0:
            return LEVEL0_SHARE * self.eps
        return (1.0 - LEVEL0_SHARE) * self.eps * 6.0 / (math.pi ** 2 * level ** 2)

    def level_epsilons(self, levels: int) -> list[float]:
        return [self.level_eps(j) for j in range(levels)]


@dataclass
class StreamState:
    """Binary-counter bucket store; owned by one ingestion context at a time."""

    cfg: StreamConfig
    buckets: dict = field(default_factory=dict)
    points_seen: int = 0
    blocks: int = 0
    lattice_unit: Optional[float] = None
    geometry: Optional[LatticeGeometry] = None
    pending: list = field(default_factory=list)
    peak_entries: int = 0
    dimension: Optional[int] = None

    @property
    def stored_entries(self) -> int:
        return sum(len(b) for b in self.buckets.values()) + len(self.pending)

    def _block_seed(self, salt: int) -> int:
        seq = np.random.SeedSequence([self.cfg.rng_seed, self.blocks, salt])
        return int(seq.generate_state(1)[0])

    def push(self, coords, color: int = 0, weight: int = 1):
        coords = np.asarray(coords, dtype=float).reshape(-1)
        if self.dimension is None:
            self.dimension = len(coords)
        elif len(coords) != self.dimension:
            raise StreamError(f"record has dimension {len(coords)}, stream has {self.dimension}")
        if not (0 <= color < self.cfg.n_colors):
            raise StreamError(f"color {color} outside [0, {self.cfg.n_colors})")
        if weight < 1:
            raise StreamError("weights must be positive integers")
        self.pending.append((coords, int(color), int(weight)))
        self.points_seen += int(weight)
        if len(self.pending) >= self.cfg.block_size:
            self.flush_block()

    def flush_block(self):
        """Summarize the pending records as a level-0 bucket and carry."""
        if not self.pending:
            return
        block = PointSet(
            np.array([r[0] for r in self.pending]),
            [r[2] for r in self.pending],
            [r[1] for r in self.pending],
            self.cfg.n_colors,
        )
        self.pending = []
        self.push_block(block)

    def push_block(self, block: PointSet):
        cfg = self.cfg
        metric = MetricConfig(cfg.power)
        built = build_movement_coreset(block, cfg.k, cfg.level_eps(0), metric,
                                       self._block_seed(0), lattice_unit=self.lattice_unit,
                                       geometry=self.geometry)
        if self.lattice_unit is None and built.meta.get("lattice_unit"):
            # the first nondegenerate block fixes the stream's lattice
            self.lattice_unit = built.meta["lattice_unit"] * UNIT_MARGIN
            self.geometry = built.meta["geometry"]
            built = build_movement_coreset(block, cfg.k, cfg.level_eps(0), metric,
                                           self._block_seed(0), lattice_unit=self.lattice_unit,
                                           geometry=self.geometry)
        built = replace(built, certificate=None)
        self.blocks += 1
        level, carry = 0, built
        while level in self.buckets:
            merged = merge(self.buckets.pop(level), carry)
            level += 1
            carry = reduce(merged, cfg.level_eps(level), self._block_seed(level),
                           self.lattice_unit, self.geometry)
            carry = replace(carry, certificate=None)
        self.buckets[level] = carry
        self.peak_entries = max(self.peak_entries, self.stored_entries)

    def summary(self) -> Coreset:
        """Merge all buckets (and a summary of any pending partial block).

        The state is left untouched, so this can serve as a checkpoint view.
        """
        parts = [self.buckets[j] for j in sorted(self.buckets)]
        if self.pending:
            clone = StreamState(self.cfg, dict(self.buckets), self.points_seen, self.blocks,
                                self.lattice_unit, self.geometry, list(self.pending),
                                self.peak_entries, self.dimension)
            clone.flush_block()
            parts = [clone.buckets[j] for j in sorted(clone.buckets)]
        if not parts:
            raise StreamError("stream is empty")
        out = parts[0]
        for p in parts[1:]:
            out = merge(out, p)
        return replace(out, k=self.cfg.k, meta={"levels": sorted(self.buckets),
                                                "points_seen": self.points_seen})

    def finalize(self) -> Coreset:
        self.flush_block()
        return self.summary()

    # -- checkpoints ----------------------------------------------------------

    def dump(self, fh: TextIO):
        cfg = self.cfg
        unit = "none" if self.lattice_unit is None else repr(float(self.lattice_unit))
        fh.write(
            f"stream-state v1 block_size={cfg.block_size} k={cfg.k} eps={cfg.eps!r} "
            f"m={cfg.power} colors={cfg.n_colors} seed={cfg.rng_seed} "
            f"points_seen={self.points_seen} blocks={self.blocks} unit={unit} "
            f"d={self.dimension if self.dimension is not None else 0} "
            f"levels={','.join(str(j) for j in sorted(self.buckets)) or '-'} "
            f"pending={len(self.pending)} geometry={0 if self.geometry is None else 1}\n"
        )
        if self.geometry is not None:
            g = self.geometry
            fh.write(f"geometry {float(g.base_radius)!r} {len(g.centers)}\n")
            for c in g.centers:
                fh.write(",".join(repr(float(v)) for v in c) + "\n")
        for j in sorted(self.buckets):
            dump_coreset(self.buckets[j], fh)
            fh.write("end\n")
        for coords, color, weight in self.pending:
            fh.write(",".join(repr(float(v)) for v in coords) + f",{color},{weight}\n")

    @classmethod
    def load(cls, fh: TextIO) -> "StreamState":
        import io

        header = fh.readline().split()
        if header[:2] != ["stream-state", "v1"]:
            raise StreamError("not a stream-state v1 checkpoint")
        f = dict(tok.split("=", 1) for tok in header[2:])
        cfg = StreamConfig(int(f["block_size"]), int(f["k"]), float(f["eps"]), int(f["m"]),
                           int(f["colors"]), int(f["seed"]))
        state = cls(cfg, points_seen=int(f["points_seen"]), blocks=int(f["blocks"]),
                    lattice_unit=None if f["unit"] == "none" else float(f["unit"]))
        state.dimension = int(f["d"]) or None
        if f.get("geometry", "0") == "1":
            _, radius, count = fh.readline().split()
            centers = np.array([[float(v) for v in fh.readline().split(",")]
                                for _ in range(int(count))])
            state.geometry = LatticeGeometry(centers, float(radius))
        levels = [] if f["levels"] == "-" else [int(v) for v in f["levels"].split(",")]
        for level in levels:
            lines = []
            for line in fh:
                if line.strip() == "end":
                    break
                lines.append(line)
            state.buckets[level] = load_coreset(io.StringIO("".join(lines)))
        for _ in range(int(f["pending"])):
            vals = fh.readline().strip().split(",")
            state.pending.append((np.array([float(v) for v in vals[:-2]]), int(vals[-2]),
                                  int(vals[-1])))
        state.peak_entries = state.stored_entries
        return state


def process_stream(source: Iterable, cfg: StreamConfig,
                   checkpoints: Iterable[int] = (), on_checkpoint=None,
                   flush_flag: Optional[str] = None, on_flush=None) -> Coreset:
    """Summarize a stream of ``(coords, color, weight)`` records.

    Args:
        source: iterable of records; ``coords`` is a length-d sequence.
        cfg: stream parameters.
        checkpoints: point counts at which ``on_checkpoint(n, state)`` is called
            (after the block containing that count is absorbed).
        flush_flag: path of a flag file; when it exists after a block, the
            state is handed to ``on_flush(state)`` and the flag removed.

    Returns:
        The final merged summary.
    """
    state = StreamState(cfg)
    run_stream(state, source, checkpoints, on_checkpoint, flush_flag, on_flush)
    return state.finalize()


def run_stream(state: StreamState, source: Iterable, checkpoints: Iterable[int] = (),
               on_checkpoint=None, flush_flag: Optional[str] = None, on_flush=None):
    marks = sorted(set(int(c) for c in checkpoints))
    blocks_before = state.blocks
    for record in source:
        coords, color, weight = record
        state.push(coords, color, weight)
        while marks and state.points_seen >= marks[0] and not state.pending:
            if on_checkpoint is not None:
                on_checkpoint(marks[0], state)
            marks.pop(0)
        if flush_flag and state.blocks != blocks_before:
            blocks_before = state.blocks
            if os.path.exists(flush_flag):
                if on_flush is not None:
                    on_flush(state)
                os.remove(flush_flag)
    # a partial block stays pending so a saved state resumes exactly
    for mark in marks:
        if state.points_seen >= mark and on_checkpoint is not None:
            on_checkpoint(mark, state)
    return state


def iter_blocks(points: PointSet) -> Iterator[tuple]:
    """Records of a point set in order, for feeding :func:`process_stream`."""
    for x, c, w in zip(points.coords, points.colors, points.weights):
        yield x, int(c), int(w)
