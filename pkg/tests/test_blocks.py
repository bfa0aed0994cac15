import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from blockopt.blocks import (
    BlockedVector,
    BlockLayout,
    block_norm,
    l2_norm,
    partition,
    view_block,
)

EPS = np.finfo(np.float64).eps

finite_values = st.floats(
    min_value=-1e100, max_value=1e100, allow_nan=False, allow_infinity=False
)


def test_partition_layout_fields():
    lay = partition([3, 4, 2])
    assert lay.sizes == (3, 4, 2)
    assert lay.offsets == (0, 3, 7)
    assert lay.total_dim == 9
    assert lay.num_blocks == 3
    assert lay.block_slice(1) == slice(3, 7)


def test_partition_rejects_bad_sizes():
    with pytest.raises(ValueError):
        partition([])
    with pytest.raises(ValueError):
        partition([3, 0, 2])
    with pytest.raises(ValueError):
        partition([-1])


def test_block_index_out_of_range():
    lay = partition([2, 2])
    with pytest.raises(IndexError):
        lay.block_slice(2)
    with pytest.raises(IndexError):
        lay.block_slice(-1)


def test_vector_length_must_match_layout():
    with pytest.raises(ValueError):
        BlockedVector(np.zeros(5), partition([2, 2]))
    with pytest.raises(ValueError):
        BlockedVector(np.zeros((2, 2)), partition([4]))


def test_view_block_is_a_writable_alias():
    v = BlockedVector(np.arange(9, dtype=float), partition([3, 4, 2]))
    view = view_block(v, 1)
    assert view.tolist() == [3.0, 4.0, 5.0, 6.0]
    view[0] = -1.0
    assert v.data[3] == -1.0
    # neighbors untouched
    assert v.data[2] == 2.0 and v.data[7] == 7.0


def test_copy_detaches_storage():
    v = BlockedVector(np.ones(4), partition([2, 2]))
    w = v.copy()
    w.data[0] = 5.0
    assert v.data[0] == 1.0


def test_block_norm_zero_iff_block_is_zero():
    v = BlockedVector(np.array([0.0, 0.0, 1.0, 2.0]), partition([2, 2]))
    assert block_norm(v, 0) == 0.0
    assert block_norm(v, 1) > 0.0


def test_l2_norm_exact_on_small_ints():
    assert l2_norm(np.array([3.0, 4.0])) == 5.0
    assert l2_norm(np.array([])) == 0.0


@given(st.lists(finite_values, min_size=1, max_size=64))
def test_l2_norm_matches_numpy(values):
    arr = np.asarray(values)
    expected = float(np.linalg.norm(arr))
    got = l2_norm(arr)
    assert math.isclose(got, expected, rel_tol=1e-12, abs_tol=1e-300)


@given(
    st.lists(finite_values, min_size=2, max_size=64),
    st.data(),
)
def test_block_norms_are_additive_in_squares(values, data):
    """sum of per-block |v_b|^2 equals |v|^2 up to accumulated rounding."""
    arr = np.asarray(values)
    cut = data.draw(st.integers(min_value=1, max_value=len(arr) - 1))
    v = BlockedVector(arr, partition([cut, len(arr) - cut]))
    total_sq = l2_norm(arr) ** 2
    blocks_sq = block_norm(v, 0) ** 2 + block_norm(v, 1) ** 2
    tol = 8 * len(arr) * EPS * max(total_sq, blocks_sq)
    assert abs(total_sq - blocks_sq) <= tol


def test_layouts_compare_by_sizes():
    assert partition([2, 3]) == partition([2, 3])
    assert partition([2, 3]) != partition([3, 2])
