import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hytegrid.indexing import (CANONICAL, ROW_REVERSED, DoFGroup, FunctionKind, Orientation,
                               TopoIndex, border_indices, cell_layout, group_count, lattice_layout,
                               lattice_points, linear_index, owned_count, slot_walk)
from hytegrid.mesh import PrimitiveKind

levels = st.integers(0, 6)
groups = st.sampled_from(list(DoFGroup))
fns = st.sampled_from([CANONICAL, ROW_REVERSED])


def test_group_counts():
    assert group_count(6, DoFGroup.VERTEX) == 2145
    assert group_count(0, DoFGroup.VERTEX) == 3
    assert group_count(1, DoFGroup.FACE_UP) == 3
    assert group_count(1, DoFGroup.FACE_DOWN) == 1


@pytest.mark.parametrize("level", range(5))
def test_cells_tile_the_face(level):
    n = 2**level
    assert group_count(level, DoFGroup.FACE_UP) + group_count(level, DoFGroup.FACE_DOWN) == n * n


def test_canonical_level1():
    pts = [(0, 0), (1, 0), (2, 0), (0, 1), (1, 1), (0, 2)]
    got = [linear_index(CANONICAL, 1, TopoIndex(DoFGroup.VERTEX, c, r)) for c, r in pts]
    assert got == list(range(6))


def test_row_reversed_top_first():
    assert linear_index(ROW_REVERSED, 1, TopoIndex(DoFGroup.VERTEX, 0, 2)) == 0


@given(levels, groups, fns)
def test_origin_and_bijection(level, group, fn):
    t0 = TopoIndex(group, 0, 0)
    size = group_count(level, group)
    if size == 0:
        return
    if fn is CANONICAL:
        assert linear_index(fn, level, t0) == 0
    side = round((np.sqrt(8 * size + 1) - 1) / 2) - 1
    c, r = lattice_points(side)
    idx = np.asarray(fn.index(side + 1, c, r))
    assert sorted(idx.tolist()) == list(range(size))


def test_outside_lattice_raises():
    with pytest.raises(IndexError):
        linear_index(CANONICAL, 1, TopoIndex(DoFGroup.VERTEX, 2, 1))


def test_owned_counts():
    assert owned_count(FunctionKind.P1, PrimitiveKind.FACE, 2) == 3
    assert owned_count(FunctionKind.P1, PrimitiveKind.EDGE, 2) == 3
    assert owned_count(FunctionKind.P1, PrimitiveKind.VERTEX, 2) == 1
    assert owned_count(FunctionKind.DG0, PrimitiveKind.FACE, 3) == 64


@given(st.integers(1, 5), st.sampled_from([FunctionKind.P1, FunctionKind.P2]))
def test_owned_counts_partition_two_face_mesh(level, kind):
    # 4 vertices, 5 edges, 2 faces; unique lattice nodes of the square
    m = kind.resolution(level)
    total = (4 * owned_count(kind, PrimitiveKind.VERTEX, level)
             + 5 * owned_count(kind, PrimitiveKind.EDGE, level)
             + 2 * owned_count(kind, PrimitiveKind.FACE, level))
    assert total == (m + 1) ** 2


def test_border_bottom_row():
    assert border_indices(CANONICAL, 1, DoFGroup.VERTEX, 0).tolist() == [0, 1, 2]
    assert border_indices(CANONICAL, 1, DoFGroup.VERTEX, 0, Orientation.REVERSED).tolist() == [2, 1, 0]


def test_border_diagonal_matches_walk():
    # level 2: side 4, diagonal from local vertex 1 (4,0) to vertex 2 (0,4)
    got = border_indices(CANONICAL, 2, DoFGroup.VERTEX, 2).tolist()
    walk = [(4 - j, j) for j in range(5)]
    want = [linear_index(CANONICAL, 2, TopoIndex(DoFGroup.VERTEX, c, r)) for c, r in walk]
    assert got == want == [4, 8, 11, 13, 14]


@given(st.integers(1, 5), st.integers(0, 2), fns)
def test_border_reversal(level, slot, fn):
    f = border_indices(fn, level, DoFGroup.VERTEX, slot)
    r = border_indices(fn, level, DoFGroup.VERTEX, slot, Orientation.REVERSED)
    assert r.tolist() == f[::-1].tolist()
    assert len(f) == 2**level + 1


@given(st.integers(1, 4), st.integers(0, 2))
def test_slot_walk_endpoints(level, slot):
    side = 2**level
    c, r = slot_walk(side, slot)
    corners = [(0, 0), (side, 0), (0, side)]
    start, end = [(0, 1), (0, 2), (1, 2)][slot]
    assert (c[0], r[0]) == corners[start] and (c[-1], r[-1]) == corners[end]


@given(st.integers(0, 4), st.sampled_from([FunctionKind.P1, FunctionKind.P2]), fns)
def test_lattice_layout_is_bijective(level, kind, fn):
    lay = lattice_layout(kind, level, fn)
    c, r = lattice_points(lay.m)
    assert sorted(lay.index(c, r).tolist()) == list(range(lay.size))


@given(st.integers(1, 4), fns)
def test_cell_layout(level, fn):
    cl = cell_layout(level, fn)
    assert cl.size == 4**level
    assert sorted(np.concatenate([cl.up, cl.down]).tolist()) == list(range(cl.size))
    assert len(cl.border_cells(0)) == 2**level
