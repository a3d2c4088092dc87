import io

import numpy as np
import pytest
from hypothesis import given

from streamcoreset.geometry import GeometryError
from streamcoreset.pointio import iter_records, read_points, write_points

from strategies import point_sets


@given(point_sets(max_colors=3, max_weight=4))
def test_roundtrip(p):
    buf = io.StringIO()
    write_points(p, buf)
    buf.seek(0)
    back = read_points(buf, p.dimension, p.n_colors)
    assert back.same_entries(p)


def test_optional_fields_and_comments():
    text = "# header\n\n0.5, 1.0\n2.0, 3.0, 1\n4.0, 5.0, 0, 3\n"
    recs = list(iter_records(io.StringIO(text), 2))
    assert [(c, w) for _, c, w in recs] == [(0, 1), (1, 1), (0, 3)]


@pytest.mark.parametrize("text", ["1,2\n1\n", "1,x\n", "1,2,-1\n", "1,2,0,0\n", "1,inf\n", "1,2,0.5\n"])
def test_malformed_lines(text):
    with pytest.raises(GeometryError):
        list(iter_records(io.StringIO(text), 2 if text.count(",") > 1 else None))


def test_empty_file():
    with pytest.raises(GeometryError):
        read_points(io.StringIO("# nothing\n"))
