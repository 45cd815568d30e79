"""Per-primitive storage of P1/P2 lattice fields and local lattice frames.

Storage (``m`` = fine-lattice resolution, ``d`` = halo depth):

* face: the closed triangle of :class:`~hytegrid.indexing.LatticeLayout`;
  border points are ghost copies.
* edge: line positions ``0..m`` measured from ``vertex_ids[0]`` (ends are
  vertex ghosts), then per neighbouring face (sorted by ID) the rows at depth
  ``1..d``, row ``k`` holding positions ``0..m-k``.
* vertex: own value, then per incident edge (sorted) the line points ``1..d``
  away from the vertex and per face of that edge the rows at depth
  ``1..d-1`` with positions ``0..d-k``.

A *frame* views one incident face as a lattice ``(a, b)`` with corners
``(c0, c1, c2)`` and ``point = c0 + a/m (c1 - c0) + b/m (c2 - c0)``; it
translates lattice coordinates into this primitive's storage indices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .indexing import CANONICAL, FunctionKind, IndexingFunction, Orientation, lattice_layout
from .mesh import PrimitiveKind


@dataclass(frozen=True)
class Frame:
    face_id: int
    corner_ids: tuple
    corners: tuple
    m: int
    table: np.ndarray          # (m+1, m+1) storage index or -1

    def lookup(self, a, b):
        a = np.asarray(a)
        b = np.asarray(b)
        ok = (a >= 0) & (b >= 0) & (a + b <= self.m)
        out = np.full(np.broadcast(a, b).shape, -1, dtype=np.int64)
        out[ok] = self.table[a[ok] if a.ndim else a, b[ok] if b.ndim else b]
        return out

    def coords(self, a, b):
        c0, c1, c2 = (np.asarray(c, dtype=float) for c in self.corners)
        a = np.asarray(a, dtype=float)[..., None] / self.m
        b = np.asarray(b, dtype=float)[..., None] / self.m
        return c0 + a * (c1 - c0) + b * (c2 - c0)


class PrimitiveLayout:
    """Storage size, owned points, frames and pack maps of one primitive."""

    def __init__(self, prim, kind: FunctionKind, level: int, fn: IndexingFunction = CANONICAL):
        if kind is FunctionKind.DG0:
            raise ValueError("DG0 fields use hytegrid.apps.transport")
        self.prim, self.kind, self.level, self.fn = prim, kind, level, fn
        self.m = m = kind.resolution(level)
        self.d = d = kind.halo_depth
        if prim.kind is PrimitiveKind.FACE:
            self.face = lattice_layout(kind, level, fn)
            self.size = self.face.size
            idx, fc, fr = self.face.interior()
            self.owned = idx
            self.owned_coords = self._face_frame().coords(fc, fr)
        elif prim.kind is PrimitiveKind.EDGE:
            self.face_ids = sorted(prim.neighbors[PrimitiveKind.FACE])
            self.row_len = [m - k + 1 for k in range(1, d + 1)]
            per_face = sum(self.row_len)
            self.halo0 = {f: m + 1 + i * per_face for i, f in enumerate(self.face_ids)}
            self.size = m + 1 + per_face * len(self.face_ids)
            self.owned = np.arange(1, m, dtype=np.int64)
            q = np.arange(1, m)
            p0, p1 = (np.asarray(c, dtype=float) for c in prim.coords)
            self.owned_coords = p0 + (q[:, None] / m) * (p1 - p0)
        else:
            self.edge_ids = sorted(prim.neighbors[PrimitiveKind.EDGE])
            off = 1
            self.line0, self.vhalo0 = {}, {}
            for e in self.edge_ids:
                self.line0[e] = off
                off += d
                for f in sorted(prim.edges[e][1]):
                    self.vhalo0[(e, f)] = off
                    off += sum(d - k + 1 for k in range(1, d))
            self.size = off
            self.owned = np.zeros(1, dtype=np.int64)
            self.owned_coords = np.asarray(prim.coords, dtype=float)

    # -- edge helpers ---------------------------------------------------------

    def edge_halo(self, face_id: int, k: int, q):
        """Storage index of edge halo point at depth ``k``, position ``q``."""
        off = self.halo0[face_id] + sum(self.row_len[:k - 1])
        return off + np.asarray(q)

    def vertex_line(self, edge_id: int, q):
        return self.line0[edge_id] + np.asarray(q) - 1

    def vertex_halo(self, edge_id: int, face_id: int, k: int, q):
        d = self.d
        off = self.vhalo0[(edge_id, face_id)] + sum(d - j + 1 for j in range(1, k))
        return off + np.asarray(q)

    # -- frames -----------------------------------------------------------------

    def _face_frame(self) -> Frame:
        p = self.prim
        return Frame(p.id, tuple(p.vertex_ids), tuple(p.coords), self.m, self.face.lin)

    def frames(self) -> list[Frame]:
        if "_frames" in self.__dict__:
            return self.__dict__["_frames"]
        p, m, d = self.prim, self.m, self.d
        out = []
        if p.kind is PrimitiveKind.FACE:
            out.append(self._face_frame())
        elif p.kind is PrimitiveKind.EDGE:
            v0, v1 = p.vertex_ids
            for f in self.face_ids:
                fv, fc, _ = p.faces[f]
                opp = next(i for i in range(3) if fv[i] not in (v0, v1))
                corners = (fc[fv.index(v0)], fc[fv.index(v1)], fc[opp])
                table = np.full((m + 1, m + 1), -1, dtype=np.int64)
                table[:, 0] = np.arange(m + 1)
                for k in range(1, d + 1):
                    table[:m - k + 1, k] = self.edge_halo(f, k, np.arange(m - k + 1))
                out.append(Frame(f, (v0, v1, fv[opp]), corners, m, table))
        else:
            v = p.id
            for f in sorted(p.neighbors[PrimitiveKind.FACE]):
                fv, fc, _ = p.faces[f]
                i = fv.index(v)
                o1, o2 = fv[(i + 1) % 3], fv[(i + 2) % 3]
                e1, e2 = self._edge_between(v, o1), self._edge_between(v, o2)
                table = np.full((m + 1, m + 1), -1, dtype=np.int64)
                table[0, 0] = 0
                for q in range(1, d + 1):
                    table[q, 0] = self.vertex_line(e1, q)
                    table[0, q] = self.vertex_line(e2, q)
                for k in range(1, d):
                    for q in range(1, d - k + 1):
                        table[q, k] = self.vertex_halo(e1, f, k, q)
                corners = (fc[i], fc[fv.index(o1)], fc[fv.index(o2)])
                out.append(Frame(f, (v, o1, o2), corners, m, table))
        self.__dict__["_frames"] = out
        return out

    def _edge_between(self, a: int, b: int) -> int:
        for e, (vids, _) in self.prim.edges.items():
            if set(vids) == {a, b}:
                return e
        raise KeyError(f"no edge between vertices {a} and {b} at primitive {self.prim.id}")

    # -- pack maps ----------------------------------------------------------------
    # Each returns storage indices on *this* primitive in wire order.

    def face_to_edge(self, edge_id: int):
        """Face rows at depth 1..d along the edge, in edge order."""
        p = self.prim
        s = p.edge_slots.index(edge_id)
        o = Orientation.FORWARD if p.slot_aligned[s] else Orientation.REVERSED
        return np.concatenate([self.face.border(s, o, k) for k in range(1, self.d + 1)])

    def face_border(self, edge_id: int):
        p = self.prim
        s = p.edge_slots.index(edge_id)
        o = Orientation.FORWARD if p.slot_aligned[s] else Orientation.REVERSED
        return self.face.border(s, o, 0)

    def edge_rows(self, face_id: int):
        return np.concatenate([self.edge_halo(face_id, k, np.arange(self.m - k + 1))
                               for k in range(1, self.d + 1)])

    def edge_to_vertex(self, vertex_id: int):
        """Edge points needed by the vertex halo, in vertex order."""
        p, m, d = self.prim, self.m, self.d
        at_start = vertex_id == p.vertex_ids[0]
        q = np.arange(1, d + 1)
        parts = [q if at_start else m - q]
        for f in self.face_ids:
            for k in range(1, d):
                qv = np.arange(0, d - k + 1)
                parts.append(self.edge_halo(f, k, qv if at_start else m - k - qv))
        return np.concatenate(parts).astype(np.int64)

    def vertex_block(self, edge_id: int):
        """Vertex storage receiving :meth:`edge_to_vertex` of ``edge_id``."""
        d = self.d
        parts = [self.vertex_line(edge_id, np.arange(1, d + 1))]
        for f in sorted(self.prim.edges[edge_id][1]):
            for k in range(1, d):
                parts.append(self.vertex_halo(edge_id, f, k, np.arange(0, d - k + 1)))
        return np.concatenate(parts).astype(np.int64)

    def edge_end(self, vertex_id: int) -> int:
        return 0 if vertex_id == self.prim.vertex_ids[0] else self.m


def layout(prim, kind: FunctionKind, level: int, fn: IndexingFunction = CANONICAL) -> PrimitiveLayout:
    key = ("layout", kind, level, fn)
    lay = prim.cache.get(key)
    if lay is None:
        lay = prim.cache[key] = PrimitiveLayout(prim, kind, level, fn)
    return lay
