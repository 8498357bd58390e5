import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from app.apps.exceptions import Saturated
from app.apps.microburst import microburst_program
from app.apps.sketch import BitmapSketch, sketch_estimate, sketch_index, sketch_update
from app.endhost.records import ExecutedTppRecord
from app.tpp.models import Encapsulation


def test_estimate_formula():
    bitmap = np.zeros(8, dtype=bool)
    bitmap[:4] = True
    assert sketch_estimate(bitmap) == pytest.approx(8 * math.log(2))
    assert sketch_estimate(np.zeros(8, dtype=bool)) == 0.0


def test_saturated_bitmap():
    try:
        sketch_estimate(np.ones(16, dtype=bool))
        assert False, "should have raised"
    except Saturated:
        pass


def test_index_is_deterministic_per_seed():
    assert sketch_index(0x0A000001, 1024, 1) == sketch_index(0x0A000001, 1024, 1)
    assert 0 <= sketch_index(0x0A000001, 1024, 2) < 1024


def test_duplicates_do_not_change_estimate():
    s = BitmapSketch(256, 3)
    for value in (1, 2, 3, 1, 2, 3):
        s.add((1, 0), value)
    once = BitmapSketch(256, 3)
    for value in (1, 2, 3):
        once.add((1, 0), value)
    assert s.estimate((1, 0)) == once.estimate((1, 0))
    assert s.take_dirty() == {(1, 0)}
    assert s.take_dirty() == set()


def test_merge_is_union():
    a, b = BitmapSketch(128, 1), BitmapSketch(128, 1)
    for v in range(10):
        a.add((1, 2), v)
    for v in range(5, 20):
        b.add((1, 2), v)
    both = BitmapSketch(128, 1)
    for v in range(20):
        both.add((1, 2), v)
    a.merge(b)
    assert np.array_equal(a.bitmap((1, 2)), both.bitmap((1, 2)))
    try:
        a.merge(BitmapSketch(64, 1))
        assert False, "should have raised"
    except ValueError:
        pass


def test_update_from_record():
    rec = ExecutedTppRecord("h3", "h0", 0, 1, 2, 0, Encapsulation.TRANSPARENT, ((1, 3), (2, 0)),
                            microburst_program(2))
    s = BitmapSketch(64, 0)
    assert sketch_update(s, rec, 0x0A000101) == 2
    assert set(s.maps) == {(1, 3), (2, 0)}


@settings(max_examples=25, deadline=None)
@given(st.sets(st.integers(min_value=0, max_value=2**32 - 1), min_size=1, max_size=200))
def test_estimate_tracks_distinct_count(values):
    s = BitmapSketch(4096, 11)
    for v in values:
        s.add((0, 0), v)
    est = s.estimate((0, 0))
    # при n << b оценка близка к точной
    assert abs(est - len(values)) <= max(3, 0.1 * len(values))
