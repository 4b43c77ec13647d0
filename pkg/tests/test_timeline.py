import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from timeground.timeline import (FrameGrid, Moment, intersect_len, make_grid, nearest_index, snap,
                                 timestamp_decimals, union_len)

ms = st.integers(min_value=0, max_value=20_000)


@st.composite
def ms_moments(draw):
    a, b = sorted((draw(ms), draw(ms)))
    return Moment(a / 1000, b / 1000)


def _cells(m: Moment) -> np.ndarray:
    # Millisecond occupancy vector; the oracle for interval lengths.
    v = np.zeros(20_001, dtype=bool)
    v[round(m.start * 1000):round(m.end * 1000)] = True
    return v


@given(ms_moments(), ms_moments())
def test_intersection_and_union_match_discretised_oracle(a, b):
    ca, cb = _cells(a), _cells(b)
    assert intersect_len(a, b) == pytest.approx((ca & cb).sum() / 1000, abs=1e-9)
    # Union by measure: for disjoint moments this counts both pieces, not the hull.
    assert union_len(a, b) == pytest.approx((ca | cb).sum() / 1000, abs=1e-9)


@given(ms_moments(), ms_moments())
def test_overlap_symmetry_and_bounds(a, b):
    assert intersect_len(a, b) == intersect_len(b, a)
    assert 0.0 <= intersect_len(a, b) <= min(a.length, b.length)
    assert max(a.length, b.length) - 1e-12 <= union_len(a, b) <= a.length + b.length + 1e-12


@pytest.mark.parametrize("bad", [(-1.0, 2.0), (3.0, 2.0), (0.0, float("nan")), (0.0, float("inf"))])
def test_moment_validation(bad):
    with pytest.raises(ValueError):
        Moment(*bad)


def test_moment_from_obj_forms():
    assert Moment.from_obj([1, 2]) == Moment(1.0, 2.0)
    assert Moment.from_obj({"start": 1, "end": 2}) == Moment(1.0, 2.0)
    m = Moment(0.5, 1.5)
    assert Moment.from_obj(m) is m
    assert m.center == 1.0 and m.length == 1.0 and m.shifted(1.0) == Moment(1.5, 2.5)


@given(st.floats(min_value=0.1, max_value=4000, allow_nan=False), st.sampled_from([1.0, 2.0, 4.0, 0.5]))
def test_make_grid_covers_duration(duration, fps):
    g = make_grid(duration, fps)
    assert g[0] == 0.0
    assert g[-1] <= duration + 1e-9
    assert duration - g[-1] < 1 / fps + 1e-9
    assert all(g[k] == k / fps for k in (0, len(g) // 2))
    # The final frame is clamped onto the duration when rounding overshoots.
    assert g[-1] in ((len(g) - 1) / fps, duration)


def test_grid_validation():
    with pytest.raises(ValueError):
        FrameGrid((0.0, 1.0, 0.5), 2.0, 2.0)
    with pytest.raises(ValueError):
        make_grid(0.0, 2.0)


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=50, unique=True), st.floats(-10, 600))
def test_nearest_index_is_a_minimiser(raw, t):
    ts = sorted(x / 2 for x in raw)
    k = nearest_index(t, ts)
    best = min(abs(x - t) for x in ts)
    assert abs(ts[k] - t) == best
    # Ties resolve to the earlier element.
    assert all(abs(ts[j] - t) > best for j in range(k))
    assert snap(t, ts) == ts[k]


def test_snap_accepts_grid():
    g = make_grid(10, 2)
    assert snap(3.3, g) == 3.5
    assert snap(3.2, g) == 3.0
    assert snap(99, g) == 10.0


def test_timestamp_decimals():
    assert timestamp_decimals(2.0) == 1
    assert timestamp_decimals(1.0) == 1
    assert timestamp_decimals(10.0) == 2
    assert timestamp_decimals(20.0) == 2
    assert timestamp_decimals(4.0) == 1
    # Enough digits to tell neighbouring frames apart.
    for fps in (0.5, 2, 3, 4, 8, 25, 30):
        d = timestamp_decimals(fps)
        g = make_grid(5, fps)
        assert len({f"{t:.{d}f}" for t in g}) == len(g)
        assert d == max(1, math.ceil(math.log10(2 * fps) - 1e-12))
