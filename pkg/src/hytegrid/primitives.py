"""Distributed macro-primitive graph, attached data and migration.

Distribution is simulated with ``P`` logical ranks inside one process.  Each
rank holds a :class:`DistributedGraph` with its own primitives and the owner
rank of their direct neighbours only; ranks interact exclusively through the
transport of :mod:`hytegrid.communication`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

from .communication import Controller, InProcessTransport, MessageBuffer, Transport
from .mesh import PrimitiveKind, SetupGraph, SetupPrimitive


class PrimitiveError(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


@dataclass
class Primitive:
    """Runtime macro-primitive: setup metadata, local neighbourhood and data.

    ``faces`` holds ``face id -> (vertex ids, coords, edge ids per slot)`` of
    incident faces and ``edges`` holds ``edge id -> (vertex ids, face ids)``
    of incident edges; kernels on edges/vertices need that geometry but no
    global topology.
    """

    id: int
    kind: PrimitiveKind
    coords: tuple
    vertex_ids: tuple
    neighbors: dict
    flag: int = 0
    edge_slots: tuple = ()
    slot_aligned: tuple = ()
    faces: dict = field(default_factory=dict)
    edges: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    # derived per-primitive tables (layouts, stencil plans); never serialized
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def serialize_meta(self, buf: MessageBuffer):
        buf.put_int(self.id).put_int(int(self.kind)).put_int(self.flag)
        buf.put_int(len(self.coords))
        for x, y in self.coords:
            buf.put_float(x).put_float(y)
        buf.put_ints(self.vertex_ids)
        buf.put_int(len(self.neighbors))
        for k in sorted(self.neighbors):
            buf.put_int(int(k)).put_ints(self.neighbors[k])
        buf.put_ints(self.edge_slots).put_ints([int(a) for a in self.slot_aligned])
        buf.put_int(len(self.faces))
        for fid in sorted(self.faces):
            vids, coords, slots = self.faces[fid]
            buf.put_int(fid).put_ints(vids).put_ints(slots)
            for x, y in coords:
                buf.put_float(x).put_float(y)
        buf.put_int(len(self.edges))
        for eid in sorted(self.edges):
            vids, fids = self.edges[eid]
            buf.put_int(eid).put_ints(vids).put_ints(fids)

    @classmethod
    def deserialize_meta(cls, buf: MessageBuffer) -> "Primitive":
        pid, kind, flag = buf.get_int(), PrimitiveKind(buf.get_int()), buf.get_int()
        coords = tuple((buf.get_float(), buf.get_float()) for _ in range(buf.get_int()))
        vids = tuple(buf.get_ints())
        neighbors = {}
        for _ in range(buf.get_int()):
            k = PrimitiveKind(buf.get_int())
            neighbors[k] = buf.get_ints()
        slots = tuple(buf.get_ints())
        aligned = tuple(bool(a) for a in buf.get_ints())
        faces = {}
        for _ in range(buf.get_int()):
            fid = buf.get_int()
            fv, fs = tuple(buf.get_ints()), tuple(buf.get_ints())
            fc = tuple((buf.get_float(), buf.get_float()) for _ in range(3))
            faces[fid] = (fv, fc, fs)
        edges = {}
        for _ in range(buf.get_int()):
            eid = buf.get_int()
            edges[eid] = (tuple(buf.get_ints()), tuple(buf.get_ints()))
        return cls(pid, kind, coords, vids, neighbors, flag, slots, aligned, faces, edges)


@dataclass(frozen=True)
class DataHandle:
    """Attach-able datum: built per primitive, optionally (de)serializable."""

    id: int
    initializer: Callable[[Primitive], Any]
    serializer: Callable[[Any], bytes] | None = None
    deserializer: Callable[[bytes], Any] | None = None
    name: str = ""


class DistributedGraph:
    def __init__(self, rank: int):
        self.rank = rank
        self.primitives: dict[int, Primitive] = {}
        self.rank_of: dict[int, int] = {}
        self.handles: dict[int, DataHandle] = {}
        self.version = 0            # bumped whenever primitives or rank_of change
        self._local = {}

    def touch(self):
        self.version += 1
        self._local.clear()

    def local(self, kind: PrimitiveKind | None = None):
        out = self._local.get(kind)
        if out is None:
            out = self._local[kind] = [self.primitives[i] for i in sorted(self.primitives)
                                       if kind is None or self.primitives[i].kind is kind]
        return list(out)

    def neighbor_rank(self, pid: int) -> int:
        try:
            return self.rank_of[pid]
        except KeyError:
            raise PrimitiveError(f"rank {self.rank} has no rank entry for primitive {pid}") from None

    def get_data(self, pid: int, handle_id: int):
        if handle_id not in self.handles:
            raise PrimitiveError(f"data handle {handle_id} is not registered")
        try:
            return self.primitives[pid].data[handle_id]
        except KeyError:
            raise PrimitiveError(f"primitive {pid} is not local to rank {self.rank}") from None

    def _prune_rank_table(self):
        keep = set(self.primitives)
        for p in self.primitives.values():
            for ids in p.neighbors.values():
                keep.update(ids)
        self.rank_of = {i: r for i, r in self.rank_of.items() if i in keep}


def _runtime_primitive(setup: SetupGraph, sp: SetupPrimitive) -> Primitive:
    prims = setup.primitives
    faces, edges = {}, {}
    face_ids = sp.neighbors.get(PrimitiveKind.FACE, [])
    edge_ids = sp.neighbors.get(PrimitiveKind.EDGE, [])
    if sp.kind is PrimitiveKind.FACE:
        face_ids = [sp.id]
    for fid in face_ids:
        f = prims[fid]
        faces[fid] = (tuple(f.vertex_ids), tuple(f.coords), tuple(f.edge_slots))
    for eid in edge_ids:
        e = prims[eid]
        edges[eid] = (tuple(e.vertex_ids), tuple(e.neighbors[PrimitiveKind.FACE]))
    if sp.kind is PrimitiveKind.EDGE:
        edges[sp.id] = (tuple(sp.vertex_ids), tuple(sp.neighbors[PrimitiveKind.FACE]))
    return Primitive(sp.id, sp.kind, tuple(sp.coords), tuple(sp.vertex_ids),
                     {k: list(v) for k, v in sp.neighbors.items()}, sp.flag,
                     tuple(sp.edge_slots), tuple(sp.slot_aligned), faces, edges)


def distribute(setup: SetupGraph, assignment: dict, ranks: int) -> list[DistributedGraph]:
    if ranks < 1:
        raise ValueError("need at least one rank")
    for pid in setup.primitives:
        if pid not in assignment:
            raise PrimitiveError(f"primitive {pid} is not assigned to a rank")
        if not 0 <= assignment[pid] < ranks:
            raise ValueError(f"primitive {pid} assigned to rank {assignment[pid]} outside [0, {ranks})")
    graphs = [DistributedGraph(r) for r in range(ranks)]
    for pid in sorted(setup.primitives):
        sp = setup.primitives[pid]
        g = graphs[assignment[pid]]
        g.primitives[pid] = _runtime_primitive(setup, sp)
        g.rank_of[pid] = g.rank
        for ids in sp.neighbors.values():
            for q in ids:
                g.rank_of[q] = assignment[q]
    for g in graphs:
        g.touch()
    return graphs


def add_data(graph: DistributedGraph, handle: DataHandle):
    if handle.id in graph.handles:
        raise PrimitiveError(f"data handle {handle.id} already registered")
    graph.handles[handle.id] = handle
    for p in graph.local():
        p.data[handle.id] = handle.initializer(p)


def serialize_primitive(graph: DistributedGraph, p: Primitive) -> bytes:
    buf = MessageBuffer()
    p.serialize_meta(buf)
    buf.put_int(len(p.data))
    for hid in sorted(p.data):
        h = graph.handles.get(hid)
        if h is None or h.serializer is None:
            raise PrimitiveError(f"data handle {hid} on primitive {p.id} has no serializer")
        buf.put_u32(hid)
        buf.put_bytes(h.serializer(p.data[hid]))
    # owner ranks of the neighbours travel with the primitive
    nbrs = sorted({q for ids in p.neighbors.values() for q in ids})
    buf.put_ints(nbrs)
    buf.put_ints([graph.rank_of[q] for q in nbrs])
    return buf.tobytes()


def deserialize_primitive(graph: DistributedGraph, payload: bytes) -> Primitive:
    buf = MessageBuffer(payload)
    p = Primitive.deserialize_meta(buf)
    for _ in range(buf.get_int()):
        hid = buf.get_u32()
        raw = buf.get_bytes()
        h = graph.handles.get(hid)
        if h is None or h.deserializer is None:
            raise PrimitiveError(f"rank {graph.rank} cannot deserialize data handle {hid}")
        p.data[hid] = h.deserializer(raw)
    nbrs, ranks = buf.get_ints(), buf.get_ints()
    for q, r in zip(nbrs, ranks):
        graph.rank_of[q] = r
    return p


class Domain:
    """All logical ranks of one run plus their transport and controller."""

    def __init__(self, setup: SetupGraph, assignment: dict | None = None, ranks: int = 1,
                 transport: Transport | None = None):
        if assignment is None:
            assignment = {pid: 0 for pid in setup.primitives}
            ranks = 1
        self.setup = setup
        self.ranks = ranks
        self.graphs = distribute(setup, assignment, ranks)
        self.transport = transport or InProcessTransport(ranks)
        self.controller = Controller(self.graphs, self.transport)
        self._next_handle = 1

    def new_handle_id(self) -> int:
        hid = self._next_handle
        self._next_handle += 1
        return hid

    def add_data(self, handle: DataHandle):
        for g in self.graphs:
            add_data(g, handle)

    def owner(self, pid: int) -> int:
        for g in self.graphs:
            if pid in g.primitives:
                return g.rank
        raise PrimitiveError(f"unknown primitive {pid}")

    def primitive(self, pid: int) -> Primitive:
        return self.graphs[self.owner(pid)].primitives[pid]

    def local_items(self, kind: PrimitiveKind | None = None):
        """``(graph, primitive)`` pairs over all ranks, rank-major."""
        for g in self.graphs:
            for p in g.local(kind):
                yield g, p

    def assignment(self) -> dict:
        return {pid: g.rank for g in self.graphs for pid in g.primitives}

    def migrate(self, pid: int, target: int):
        migrate(self.graphs, pid, target, self.transport)


def migrate(graphs: list[DistributedGraph], pid: int, target: int, transport: Transport):
    """Point-to-point move of one primitive with all attached data.

    The source ships the serialized primitive to ``target`` and notifies every
    rank owning one of its neighbours, so their rank tables stay correct.
    """
    source = next((g for g in graphs if pid in g.primitives), None)
    if source is None:
        raise PrimitiveError(f"unknown primitive {pid}")
    if not 0 <= target < len(graphs):
        raise ValueError(f"target rank {target} out of range")
    if source.rank == target:
        return
    p = source.primitives[pid]
    payload = serialize_primitive(source, p)
    transport.send(source.rank, target, ("migrate", pid), payload)
    notify = sorted({source.rank_of[q] for ids in p.neighbors.values() for q in ids}
                    - {target})
    del source.primitives[pid]
    for r in notify:
        transport.send(source.rank, r, ("rank-update", pid),
                       MessageBuffer().put_int(pid).put_int(target).tobytes())

    dst = graphs[target]
    _, data = transport.recv(target, ("migrate", pid), source=source.rank)
    dst.primitives[pid] = deserialize_primitive(dst, data)
    dst.rank_of[pid] = target
    for r in notify:
        _, msg = transport.recv(r, ("rank-update", pid), source=source.rank)
        buf = MessageBuffer(msg)
        q, new_rank = buf.get_int(), buf.get_int()
        graphs[r].rank_of[q] = new_rank
    source._prune_rank_table()
    dst._prune_rank_table()
    for g in graphs:
        g.touch()
