"""Line-oriented point files.

One point per line: ``d`` comma-separated coordinates, then an optional
integer color (0-based) and an optional integer weight (default 1). Blank
lines and lines starting with ``#`` are skipped. Without an explicit
dimension every field on a line is a coordinate.

Example, a 2-d colored file::

    # x, y, color
    0.0, 1.5, 0
    2.0, 0.5, 1
"""

from __future__ import annotations

from typing import Iterator, Optional, TextIO

import numpy as np

from .geometry import GeometryError, PointSet


def _int_field(text: str, what: str, lineno: int) -> int:
    try:
        value = float(text)
    except ValueError:
        raise GeometryError(f"line {lineno}: {what} {text!r} is not a number") from None
    if value != int(value):
        raise GeometryError(f"line {lineno}: {what} {text!r} is not an integer")
    return int(value)


def iter_records(fh: TextIO, dimension: Optional[int] = None) -> Iterator[tuple]:
    """Yield ``(coords, color, weight)`` per data line.

    Raises:
        GeometryError: on malformed lines.
    """
    d = dimension
    for lineno, line in enumerate(fh, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if d is None:
            d = len(fields)
        if not d <= len(fields) <= d + 2:
            raise GeometryError(f"line {lineno}: expected {d} to {d + 2} fields, got {len(fields)}")
        try:
            coords = np.array([float(f) for f in fields[:d]])
        except ValueError:
            raise GeometryError(f"line {lineno}: bad coordinate in {line!r}") from None
        if not np.all(np.isfinite(coords)):
            raise GeometryError(f"line {lineno}: coordinates must be finite")
        color = _int_field(fields[d], "color", lineno) if len(fields) > d else 0
        weight = _int_field(fields[d + 1], "weight", lineno) if len(fields) > d + 1 else 1
        if color < 0:
            raise GeometryError(f"line {lineno}: color must be nonnegative")
        if weight < 1:
            raise GeometryError(f"line {lineno}: weight must be positive")
        yield coords, color, weight


def read_points(fh: TextIO, dimension: Optional[int] = None,
                n_colors: Optional[int] = None) -> PointSet:
    """Read a whole point file into a :class:`PointSet`."""
    coords, colors, weights = [], [], []
    for x, c, w in iter_records(fh, dimension):
        coords.append(x)
        colors.append(c)
        weights.append(w)
    if not coords:
        raise GeometryError("no points in input")
    return PointSet.from_points(np.vstack(coords), weights, colors, n_colors)


def write_points(points: PointSet, fh: TextIO, with_color: bool = True, with_weight: bool = True):
    for x, c, w in zip(points.coords, points.colors, points.weights):
        fields = ["{:.17g}".format(v) for v in x]
        if with_color or with_weight:
            fields.append(str(int(c)))
        if with_weight:
            fields.append(str(int(w)))
        fh.write(",".join(fields) + "\n")
