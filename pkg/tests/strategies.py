"""Hypothesis strategies shared by the property tests."""

import numpy as np
from hypothesis import strategies as st

from streamcoreset import PointSet


@st.composite
def point_sets(draw, min_n=1, max_n=8, max_d=2, max_colors=1, max_weight=1):
    n = draw(st.integers(min_n, max_n))
    d = draw(st.integers(1, max_d))
    coords = draw(st.lists(
        st.lists(st.integers(-8, 8), min_size=d, max_size=d), min_size=n, max_size=n))
    n_colors = draw(st.integers(1, max_colors))
    colors = draw(st.lists(st.integers(0, n_colors - 1), min_size=n, max_size=n))
    weights = draw(st.lists(st.integers(1, max_weight), min_size=n, max_size=n))
    return PointSet.from_points(np.array(coords, dtype=float) / 2, weights, colors, n_colors)


def centers_for(draw, d, k):
    vals = draw(st.lists(st.lists(st.integers(-8, 8), min_size=d, max_size=d),
                         min_size=k, max_size=k))
    return np.array(vals, dtype=float) / 2
