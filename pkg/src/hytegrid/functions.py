"""Grid functions over the distributed refined mesh and BLAS-1 style kernels."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .communication import SYNC_ORDER, MessageBuffer, PackInfo
from .indexing import CANONICAL, FunctionKind, IndexingFunction
from .layout import layout
from .mesh import PrimitiveKind
from .primitives import DataHandle, Domain


class DoFFlag(enum.IntFlag):
    INNER = 1
    DIRICHLET = 2
    NEUMANN = 4


ALL = DoFFlag.INNER | DoFFlag.DIRICHLET | DoFFlag.NEUMANN
FREE = DoFFlag.INNER | DoFFlag.NEUMANN


class KindMismatch(TypeError):
    pass


def boundary_map(mapping: dict | None = None):
    """Mesh boundary flag -> DoFFlag; 0 is INNER, unknown flags are Dirichlet."""
    mapping = dict(mapping or {})

    def bc(flag: int) -> DoFFlag:
        if flag == 0:
            return DoFFlag.INNER
        return DoFFlag(mapping.get(flag, DoFFlag.DIRICHLET))

    return bc


@dataclass
class FieldData:
    values: np.ndarray
    flags: np.ndarray


def _serialize_levels(levels: dict) -> bytes:
    buf = MessageBuffer()
    buf.put_int(len(levels))
    for lvl in sorted(levels):
        buf.put_int(lvl).put_array(levels[lvl].values).put_array(levels[lvl].flags)
    return buf.tobytes()


def _deserialize_levels(raw: bytes) -> dict:
    buf = MessageBuffer(raw)
    out = {}
    for _ in range(buf.get_int()):
        lvl = buf.get_int()
        vals = buf.get_array().copy()
        flags = buf.get_array().copy()
        out[lvl] = FieldData(vals, flags)
    return out


class LatticePackInfo(PackInfo):
    """Ghost exchange of one level of a P1/P2 function (values or flags)."""

    def __init__(self, fn: "ScalarFunction", level: int, field: str = "values"):
        self.f, self.level, self.field = fn, level, field
        # plain-string prefix: these keys are hashed on every ghost copy
        self._prefix = f"pack/{fn.kind.value}/{level}/{fn.indexing.name}"

    def _arr(self, prim):
        return getattr(prim.data[self.f.handle_id][self.level], self.field)

    def _key(self, other_id, role):
        return (self._prefix, other_id, role)

    def send_map(self, sender, receiver_id):
        key = self._key(receiver_id, "send")
        idx = sender.cache.get(key)
        if idx is None:
            lay = layout(sender, self.f.kind, self.level, self.f.indexing)
            if sender.kind is PrimitiveKind.VERTEX:
                idx = np.zeros(1, dtype=np.int64)
            elif sender.kind is PrimitiveKind.FACE:
                idx = lay.face_to_edge(receiver_id)
            elif receiver_id in sender.neighbors.get(PrimitiveKind.FACE, ()):
                idx = np.arange(lay.m + 1)
            else:
                idx = lay.edge_to_vertex(receiver_id)
            sender.cache[key] = idx
        return idx

    def recv_map(self, receiver, sender_id):
        key = self._key(sender_id, "recv")
        idx = receiver.cache.get(key)
        if idx is None:
            lay = layout(receiver, self.f.kind, self.level, self.f.indexing)
            if receiver.kind is PrimitiveKind.FACE:
                idx = lay.face_border(sender_id)
            elif receiver.kind is PrimitiveKind.VERTEX:
                idx = lay.vertex_block(sender_id)
            elif sender_id in receiver.vertex_ids:
                idx = np.array([lay.edge_end(sender_id)])
            else:
                idx = lay.edge_rows(sender_id)
            receiver.cache[key] = idx
        return idx

    def pack(self, sender, receiver_id, buf):
        buf.put_array(self._arr(sender)[self.send_map(sender, receiver_id)])

    def unpack(self, receiver, sender_id, buf):
        recv = self.recv_map(receiver, sender_id)
        data = buf.get_array()
        if len(data) != len(recv):
            raise ValueError(f"slot/neighbour mismatch: got {len(data)} values for {len(recv)} ghosts")
        self._arr(receiver)[recv] = data

    def local_copy(self, sender, receiver):
        key = (self._prefix, sender.id)
        maps = receiver.cache.get(key)
        if maps is None:
            maps = receiver.cache[key] = (self.send_map(sender, receiver.id), self.recv_map(receiver, sender.id))
        h, lvl, fld = self.f.handle_id, self.level, self.field     # hot path: inlined _arr
        getattr(receiver.data[h][lvl], fld)[maps[1]] = getattr(sender.data[h][lvl], fld)[maps[0]]


class ScalarFunction:
    """A P1 or P2 function on levels ``min_level..max_level`` of a domain.

    Values live as attached data on each local primitive (one
    :class:`FieldData` per level) so they migrate with the primitive.
    """

    def __init__(self, domain: Domain, name: str, kind: FunctionKind, min_level: int,
                 max_level: int, bc=None, indexing: IndexingFunction = CANONICAL):
        if kind is FunctionKind.DG0:
            raise ValueError("use hytegrid.apps.transport.CellFunction for DG0")
        if min_level > max_level or min_level < 0:
            raise ValueError(f"bad level range {min_level}..{max_level}")
        self.domain, self.name, self.kind = domain, name, kind
        self.min_level, self.max_level = min_level, max_level
        self.indexing = indexing
        self.bc = bc if callable(bc) else boundary_map(bc)
        self.handle_id = domain.new_handle_id()
        domain.add_data(DataHandle(self.handle_id, self._init_data, _serialize_levels,
                                   _deserialize_levels, name))
        for lvl in self.levels:
            self.domain.controller.sync(LatticePackInfo(self, lvl, "flags"), channel=(self.handle_id, "flags"))

    @property
    def levels(self):
        return range(self.min_level, self.max_level + 1)

    def _init_data(self, prim):
        out = {}
        for lvl in self.levels:
            lay = layout(prim, self.kind, lvl, self.indexing)
            flags = np.zeros(lay.size, dtype=np.int8)
            if prim.kind is PrimitiveKind.FACE:
                flags[lay.owned] = DoFFlag.INNER
            else:
                flags[lay.owned] = self.bc(prim.flag)
            out[lvl] = FieldData(np.zeros(lay.size), flags)
        return out

    def similar(self, name: str | None = None, kind: FunctionKind | None = None) -> "ScalarFunction":
        return ScalarFunction(self.domain, name or self.name + "'", kind or self.kind,
                              self.min_level, self.max_level, self.bc, self.indexing)

    # -- access ---------------------------------------------------------------

    def data(self, prim, level) -> FieldData:
        try:
            return prim.data[self.handle_id][level]
        except KeyError:
            raise KeyError(f"{self.name} has no level {level} on primitive {prim.id}") from None

    def values(self, prim, level) -> np.ndarray:
        return self.data(prim, level).values

    def layout(self, prim, level):
        return layout(prim, self.kind, level, self.indexing)

    def owned(self, prim, level, mask=ALL):
        """Storage indices of owned DoFs whose flag is in ``mask``."""
        lay = self.layout(prim, level)
        if mask == ALL:
            return lay.owned
        key = ("owned", self.handle_id, level, int(mask))
        sel = prim.cache.get(key)
        if sel is None:
            fl = self.data(prim, level).flags[lay.owned]
            sel = prim.cache[key] = lay.owned[(fl & int(mask)) != 0]
        return sel

    def items(self, kind: PrimitiveKind | None = None):
        return self.domain.local_items(kind)

    def pack_info(self, level, field="values") -> LatticePackInfo:
        return LatticePackInfo(self, level, field)

    def sync(self, level, directions=SYNC_ORDER):
        self.domain.controller.sync(self.pack_info(level), directions, channel=(self.handle_id,))

    def owned_vector(self, level) -> np.ndarray:
        """Owned values concatenated in (rank, primitive id) order.  Debug/test helper."""
        return np.concatenate([self.values(p, level)[self.owned(p, level)] for _, p in self.items()])

    def owned_map(self, level) -> dict:
        """Owned values keyed by primitive id (partition independent)."""
        return {p.id: self.values(p, level)[self.owned(p, level)].copy() for _, p in self.items()}

    # -- BLAS-1 conveniences ----------------------------------------------------

    def interpolate(self, expr, level, mask=ALL):
        interpolate(self, expr, level, mask)
        return self

    def assign(self, coeffs, funcs, level, mask=ALL):
        assign_many(coeffs, funcs, self, level, mask)
        return self

    def dot(self, other, level, mask=ALL) -> float:
        return dot(self, other, level, mask)

    def __repr__(self):
        return f"ScalarFunction({self.name!r}, {self.kind.value}, levels {self.min_level}..{self.max_level})"


def _check_kinds(*funcs):
    k = funcs[0].kind
    for f in funcs[1:]:
        if f.kind is not k:
            raise KindMismatch(f"function kinds differ: {k.value} vs {f.kind.value}")
        if f.domain is not funcs[0].domain:
            raise KindMismatch("functions live on different domains")


def interpolate(f: ScalarFunction, expr, level, mask=ALL):
    """Set owned DoFs (flag in ``mask``) to ``expr(x, y)``; ghosts untouched."""
    for _, p in f.items():
        lay = f.layout(p, level)
        xy = np.atleast_2d(lay.owned_coords)
        vals = np.broadcast_to(np.asarray(expr(xy[:, 0], xy[:, 1]), dtype=float), (len(xy),))
        arr = f.values(p, level)
        fl = f.data(p, level).flags[lay.owned]
        sel = (fl & int(mask)) != 0
        arr[lay.owned[sel]] = vals[sel]


def assign(alpha, x1, beta, x2, dst, level, mask=ALL):
    """``dst := alpha*x1 + beta*x2`` on owned DoFs, no communication."""
    assign_many((alpha, beta), (x1, x2), dst, level, mask)


def assign_many(coeffs, funcs, dst, level, mask=ALL):
    _check_kinds(dst, *funcs)
    for _, p in dst.items():
        idx = dst.owned(p, level, mask)
        acc = coeffs[0] * funcs[0].values(p, level)[idx]
        for c, g in zip(coeffs[1:], funcs[1:]):
            acc = acc + c * g.values(p, level)[idx]
        dst.values(p, level)[idx] = acc


def add_scaled(dst, gamma, y, level, mask=ALL):
    """``dst += gamma*y`` on owned DoFs."""
    _check_kinds(dst, y)
    for _, p in dst.items():
        idx = dst.owned(p, level, mask)
        dst.values(p, level)[idx] += gamma * y.values(p, level)[idx]


def set_value(dst, value: float, level, mask=ALL):
    for _, p in dst.items():
        dst.values(p, level)[dst.owned(p, level, mask)] = value


def copy(dst, src, level, mask=ALL):
    assign_many((1.0,), (src,), dst, level, mask)


def dot(x1, x2, level, mask=ALL) -> float:
    """Global dot product; per-primitive partials are tree-reduced in ID order."""
    _check_kinds(x1, x2)
    partials = []
    for g in x1.domain.graphs:
        part = {}
        for p in g.local():
            idx = x1.owned(p, level, mask)
            part[p.id] = float(np.dot(x1.values(p, level)[idx], x2.values(p, level)[idx]))
        partials.append(part)
    return x1.domain.controller.reduce_partials(partials)


def norm2(x, level, mask=ALL) -> float:
    return math.sqrt(dot(x, x, level, mask))


def max_abs(x, level, mask=ALL) -> float:
    partials = []
    for g in x.domain.graphs:
        part = {}
        for p in g.local():
            v = x.values(p, level)[x.owned(p, level, mask)]
            part[p.id] = float(np.max(np.abs(v))) if len(v) else 0.0
        partials.append(part)
    return x.domain.controller.reduce_partials(partials, max)


def sum_values(x, level, mask=ALL) -> float:
    partials = []
    for g in x.domain.graphs:
        partials.append({p.id: float(np.sum(x.values(p, level)[x.owned(p, level, mask)]))
                         for p in g.local()})
    return x.domain.controller.reduce_partials(partials)


def count_dofs(x, level, mask=ALL) -> int:
    partials = []
    for g in x.domain.graphs:
        partials.append({p.id: float(len(x.owned(p, level, mask))) for p in g.local()})
    return int(x.domain.controller.reduce_partials(partials))


def ghost_checksum(x, level) -> float:
    """Sum of all ghost (non-owned) storage entries; assign must not change it."""
    total = 0.0
    for _, p in x.items():
        arr = x.values(p, level)
        mask = np.ones(len(arr), dtype=bool)
        mask[x.layout(p, level).owned] = False
        total += float(np.sum(np.abs(arr[mask])))
    return total
