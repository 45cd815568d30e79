"""DoF groups, counts and exchangeable indexing functions for refined triangles.

Every DoF group on a macro-face forms a triangular lattice with ``size``
points in its bottom row.  An :class:`IndexingFunction` maps the topological
``(col, row)`` coordinate of such a lattice to a linear storage index; kernels
only ever talk to the indexing function, so the memory layout can be swapped
without touching them.

P1 and P2 fields are additionally viewed as a single *fine lattice* of
resolution ``m`` (``m = n`` for P1, ``m = 2n`` for P2) whose points are
classified into groups by parity.  :class:`LatticeLayout` hides that view.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class DoFGroup(enum.IntEnum):
    VERTEX = 0
    EDGE_HORIZONTAL = 1
    EDGE_DIAGONAL = 2
    EDGE_VERTICAL = 3
    FACE_UP = 4
    FACE_DOWN = 5


class FunctionKind(enum.Enum):
    P1 = "P1"
    P2 = "P2"
    DG0 = "DG0"

    @property
    def groups(self) -> tuple[DoFGroup, ...]:
        return _KIND_GROUPS[self]

    def resolution(self, level: int) -> int:
        """Side length of the fine lattice (DG0 has none: cell count per row)."""
        n = 2**level
        return 2 * n if self is FunctionKind.P2 else n

    @property
    def halo_depth(self) -> int:
        return {FunctionKind.P1: 1, FunctionKind.P2: 2, FunctionKind.DG0: 1}[self]


_KIND_GROUPS = {
    FunctionKind.P1: (DoFGroup.VERTEX,),
    FunctionKind.P2: (DoFGroup.VERTEX, DoFGroup.EDGE_HORIZONTAL,
                      DoFGroup.EDGE_DIAGONAL, DoFGroup.EDGE_VERTICAL),
    FunctionKind.DG0: (DoFGroup.FACE_UP, DoFGroup.FACE_DOWN),
}


class Orientation(enum.IntEnum):
    FORWARD = 0
    REVERSED = 1


def group_size(level: int, group: DoFGroup) -> int:
    """Number of lattice points in the bottom row of ``group`` on one face."""
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    n = 2**level
    if group is DoFGroup.VERTEX:
        return n + 1
    if group is DoFGroup.FACE_DOWN:
        return n - 1
    return n


def group_count(level: int, group: DoFGroup) -> int:
    s = group_size(level, group)
    return s * (s + 1) // 2


@dataclass(frozen=True)
class TopoIndex:
    group: DoFGroup
    col: int
    row: int


class IndexingFunction:
    """Bijection from ``(col, row)`` on a triangular lattice to ``[0, count)``.

    Subclasses implement :meth:`index` for a lattice with ``size`` points in
    row 0; it must accept numpy integer arrays.
    """

    name = "abstract"

    def index(self, size, col, row):
        raise NotImplementedError

    def __repr__(self):
        return f"<IndexingFunction {self.name}>"


class RowMajor(IndexingFunction):
    """Bottom row first; the row stride shrinks by one every row."""

    name = "row-major"

    def index(self, size, col, row):
        return row * size - (row * (row - 1)) // 2 + col


class RowReversed(IndexingFunction):
    """Top row first, i.e. row-major with the row order flipped."""

    name = "row-reversed"

    def index(self, size, col, row):
        # rows above `row` hold 1 + 2 + ... + (size - row - 1) entries
        above = size - row - 1
        return (above * (above + 1)) // 2 + col


CANONICAL = RowMajor()
ROW_REVERSED = RowReversed()


def _check(level: int, t: TopoIndex) -> int:
    s = group_size(level, t.group)
    if t.col < 0 or t.row < 0 or t.col + t.row > s - 1:
        raise IndexError(f"{t} is outside the level-{level} lattice")
    return s


def linear_index(fn: IndexingFunction, level: int, t: TopoIndex) -> int:
    s = _check(level, t)
    return int(fn.index(s, t.col, t.row))


def lattice_points(side: int):
    """All ``(col, row)`` with ``col + row <= side`` in row-major order."""
    cols, rows = [], []
    for r in range(side + 1):
        for c in range(side + 1 - r):
            cols.append(c)
            rows.append(r)
    return np.array(cols, dtype=np.int64), np.array(rows, dtype=np.int64)


def slot_walk(side: int, slot: int, depth: int = 0):
    """Lattice coordinates parallel to face border ``slot`` at ``depth``.

    Slot 0 runs from local vertex 0 to 1 (bottom), slot 1 from vertex 0 to 2
    (left), slot 2 from vertex 1 to 2 (diagonal).  Returns ``(cols, rows)``
    ordered away from the slot's start vertex.
    """
    if slot not in (0, 1, 2):
        raise ValueError(f"invalid edge slot {slot}")
    if depth < 0 or depth > side:
        raise ValueError(f"depth {depth} outside lattice of side {side}")
    j = np.arange(side - depth + 1, dtype=np.int64)
    k = np.full_like(j, depth)
    if slot == 0:
        return j, k
    if slot == 1:
        return k, j
    return side - depth - j, j


def border_indices(fn: IndexingFunction, level: int, group: DoFGroup, slot: int,
                   orientation: Orientation = Orientation.FORWARD, depth: int = 0):
    s = group_size(level, group)
    cols, rows = slot_walk(s - 1, slot, depth)
    idx = np.asarray(fn.index(s, cols, rows), dtype=np.int64)
    if orientation is Orientation.REVERSED:
        idx = idx[::-1].copy()
    return idx


def owned_count(kind: FunctionKind, primitive_kind, level: int) -> int:
    """Unknowns owned by one macro-primitive (ghost copies excluded)."""
    from .mesh import PrimitiveKind

    n = 2**level
    if kind is FunctionKind.DG0:
        return n * n if primitive_kind is PrimitiveKind.FACE else 0
    m = kind.resolution(level)
    if primitive_kind is PrimitiveKind.VERTEX:
        return 1
    if primitive_kind is PrimitiveKind.EDGE:
        return m - 1
    return (m - 1) * (m - 2) // 2


class LatticeLayout:
    """Storage layout of a P1/P2 field on one macro-face at one level.

    Groups are stored as contiguous blocks in ``kind.groups`` order, each
    addressed through the indexing function.  ``lin[fc, fr]`` is the storage
    index of fine-lattice point ``(fc, fr)`` or -1 outside the triangle.
    """

    def __init__(self, kind: FunctionKind, level: int, fn: IndexingFunction = CANONICAL):
        if kind is FunctionKind.DG0:
            raise ValueError("DG0 has no vertex lattice")
        self.kind, self.level, self.fn = kind, level, fn
        self.m = m = kind.resolution(level)
        step = m // 2**level
        offsets, off = {}, 0
        for g in kind.groups:
            offsets[g] = off
            off += group_count(level, g)
        self.size = off
        self.offsets = offsets
        lin = np.full((m + 1, m + 1), -1, dtype=np.int64)
        fc, fr = lattice_points(m)
        if step == 1:
            groups = np.zeros_like(fc)
            gc, gr = fc, fr
        else:
            par = (fc % 2, fr % 2)
            code = {(0, 0): DoFGroup.VERTEX, (1, 0): DoFGroup.EDGE_HORIZONTAL,
                    (1, 1): DoFGroup.EDGE_DIAGONAL, (0, 1): DoFGroup.EDGE_VERTICAL}
            groups = np.array([code[(a, b)] for a, b in zip(*par)], dtype=np.int64)
            gc, gr = fc // 2, fr // 2
        for g in kind.groups:
            sel = groups == (g if step != 1 else 0)
            s = group_size(level, g)
            lin[fc[sel], fr[sel]] = offsets[g] + np.asarray(fn.index(s, gc[sel], gr[sel]))
        self.lin = lin

    def index(self, fc, fr):
        return self.lin[fc, fr]

    def border(self, slot: int, orientation: Orientation = Orientation.FORWARD, depth: int = 0):
        cols, rows = slot_walk(self.m, slot, depth)
        idx = self.lin[cols, rows]
        return idx[::-1].copy() if orientation is Orientation.REVERSED else idx

    def interior(self):
        """Storage indices and coordinates of face-owned points, row-major."""
        fc, fr = lattice_points(self.m)
        sel = (fc > 0) & (fr > 0) & (fc + fr < self.m)
        fc, fr = fc[sel], fr[sel]
        return self.lin[fc, fr], fc, fr


@lru_cache(maxsize=None)
def lattice_layout(kind: FunctionKind, level: int, fn: IndexingFunction = CANONICAL) -> LatticeLayout:
    return LatticeLayout(kind, level, fn)


class CellLayout:
    """Storage of DG0 cell values on one face: FACE_UP block then FACE_DOWN."""

    def __init__(self, level: int, fn: IndexingFunction = CANONICAL):
        self.level, self.fn = level, fn
        self.n = n = 2**level
        self.n_up = group_count(level, DoFGroup.FACE_UP)
        self.n_down = group_count(level, DoFGroup.FACE_DOWN) if n > 1 else 0
        self.size = self.n_up + self.n_down
        uc, ur = lattice_points(n - 1)
        self.up = np.asarray(fn.index(n, uc, ur), dtype=np.int64)
        self.up_c, self.up_r = uc, ur
        if n > 1:
            dc, dr = lattice_points(n - 2)
            self.down = self.n_up + np.asarray(fn.index(n - 1, dc, dr), dtype=np.int64)
            self.down_c, self.down_r = dc, dr
        else:
            self.down = np.zeros(0, dtype=np.int64)
            self.down_c = self.down_r = np.zeros(0, dtype=np.int64)

    def up_index(self, c, r):
        return np.asarray(self.fn.index(self.n, c, r), dtype=np.int64)

    def down_index(self, c, r):
        return self.n_up + np.asarray(self.fn.index(self.n - 1, c, r), dtype=np.int64)

    def border_cells(self, slot: int, orientation: Orientation = Orientation.FORWARD):
        """Up-cells touching border ``slot``, ordered from the slot's start vertex."""
        cols, rows = slot_walk(self.n - 1, slot, 0)
        idx = self.up_index(cols, rows)
        return idx[::-1].copy() if orientation is Orientation.REVERSED else idx


@lru_cache(maxsize=None)
def cell_layout(level: int, fn: IndexingFunction = CANONICAL) -> CellLayout:
    return CellLayout(level, fn)
