import pytest
from hypothesis import given, strategies as st

from chunkcascade.pyramid import (
    ChunkIndex,
    PyramidSpec,
    children,
    chunk_count,
    derived_labels,
    from_linear,
    iter_level,
    linear_index,
    parent,
)

import numpy as np


@pytest.mark.parametrize(
    "dim, levels, axes, level, expected",
    [
        (3, 2, (4, 4, 4), 0, 64),
        (3, 2, (4, 4, 4), 1, 8),
        (2, 3, (8, 8), 2, 4),
    ],
)
def test_chunk_count(dim, levels, axes, level, expected):
    assert chunk_count(PyramidSpec(dim, levels, axes), level) == expected


def test_chunk_count_level_out_of_range():
    spec = PyramidSpec(3, 2, (4, 4, 4))
    with pytest.raises(ValueError):
        chunk_count(spec, 2)
    with pytest.raises(ValueError):
        chunk_count(spec, -1)


@pytest.mark.parametrize(
    "args",
    [(0, 1, (2,)), (1, 0, (2,)), (2, 2, (4,)), (1, 3, (6,)), (2, 2, (2, 3))],
)
def test_invalid_specs_rejected(args):
    with pytest.raises(ValueError):
        PyramidSpec(*args)


def test_children_of_3d_parent():
    spec = PyramidSpec(3, 2, (4, 4, 4))
    kids = children(spec, ChunkIndex(1, (0, 0, 0)))
    expected = {ChunkIndex(0, (a, b, c)) for a in (0, 1) for b in (0, 1) for c in (0, 1)}
    assert kids == expected


def test_children_1d():
    spec = PyramidSpec(1, 2, (8,))
    assert children(spec, ChunkIndex(1, (2,))) == {ChunkIndex(0, (4,)), ChunkIndex(0, (5,))}


def test_children_2d_level2():
    spec = PyramidSpec(2, 3, (8, 8))
    kids = children(spec, ChunkIndex(2, (0, 0)))
    assert len(kids) == 4
    assert all(k.level == 1 for k in kids)


def test_children_of_level0_is_error():
    spec = PyramidSpec(2, 2, (4, 4))
    with pytest.raises(ValueError):
        children(spec, ChunkIndex(0, (0, 0)))


def test_parent_examples():
    assert parent(PyramidSpec(3, 2, (4, 4, 4)), ChunkIndex(0, (1, 1, 1))) == ChunkIndex(1, (0, 0, 0))
    assert parent(PyramidSpec(2, 2, (6, 4)), ChunkIndex(0, (5, 2))) == ChunkIndex(1, (2, 1))


def test_parent_of_top_is_error():
    spec = PyramidSpec(2, 2, (4, 4))
    with pytest.raises(ValueError):
        parent(spec, ChunkIndex(1, (0, 0)))


def test_index_outside_grid_rejected():
    spec = PyramidSpec(2, 2, (4, 4))
    with pytest.raises(ValueError):
        parent(spec, ChunkIndex(0, (4, 0)))


@st.composite
def specs(draw):
    dim = draw(st.integers(1, 3))
    levels = draw(st.integers(1, 3))
    step = 2 ** (levels - 1)
    axes = tuple(step * draw(st.integers(1, 3)) for _ in range(dim))
    return PyramidSpec(dim, levels, axes)


@given(specs())
def test_level_counts_scale(spec):
    for k in range(spec.levels):
        assert chunk_count(spec, k) * 2 ** (spec.dim * k) == chunk_count(spec, 0)


@given(specs())
def test_children_partition_lower_level(spec):
    for k in range(1, spec.levels):
        seen = set()
        for p in iter_level(spec, k):
            kids = children(spec, p)
            assert len(kids) == 2**spec.dim
            assert not (kids & seen)
            seen |= kids
            for c in kids:
                assert parent(spec, c) == p
                assert all(cc // 2 == pc for cc, pc in zip(c.coords, p.coords))
        assert seen == set(iter_level(spec, k - 1))


@given(specs())
def test_linearization_round_trip(spec):
    for k in range(spec.levels):
        for pos, idx in enumerate(iter_level(spec, k)):
            assert linear_index(spec, idx) == pos
            assert from_linear(spec, k, pos) == idx


@given(specs(), st.integers(0, 2**32 - 1))
def test_derived_labels_are_or_of_children(spec, seed):
    rng = np.random.default_rng(seed)
    l0 = rng.random(spec.shape(0)) < 0.2
    labels = derived_labels(l0, spec)
    for k in range(1, spec.levels):
        for p in iter_level(spec, k):
            expected = any(labels[k - 1][c.coords] for c in children(spec, p))
            assert labels[k][p.coords] == expected
