import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from reusealloc import patterns as pt


def test_empty_pattern_is_representable():
    assert pt.members(0) == []
    assert pt.label(0) == "{}"
    assert pt.from_members([]) == 0


def test_full_and_singleton():
    assert pt.full(3) == 0b111
    assert pt.singleton(2) == 0b100
    assert pt.label(pt.full(3)) == "{1,2,3}"


@given(st.integers(min_value=0, max_value=(1 << 12) - 1))
def test_members_round_trip(bits):
    assert pt.from_members(pt.members(bits)) == bits
    assert pt.popcount(bits) == len(pt.members(bits))
    assert all(pt.contains(bits, i) for i in pt.members(bits))


@given(st.integers(min_value=0, max_value=(1 << 8) - 1))
def test_subsets_enumerates_every_submask_once(bits):
    subs = list(pt.subsets(bits))
    expected = sorted(b for b in range(1 << 8) if b & ~bits == 0)
    assert subs == expected


def test_membership_matrix():
    n = 3
    mem = pt.membership(n)
    assert mem.shape == (n, 8)
    for i, a in itertools.product(range(n), range(8)):
        assert mem[i, a] == pt.contains(a, i)
    np.testing.assert_array_equal(pt.sizes(n), [pt.popcount(a) for a in range(8)])


def test_size_cap():
    pt.check_size(16)
    with pytest.raises(pt.ExponentialSizeError, match="exponential"):
        pt.check_size(17)
    with pytest.raises(ValueError):
        pt.check_size(0)
