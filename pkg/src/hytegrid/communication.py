"""Three-layer communication: byte buffers, packing hooks, and direction control.

* buffer layer: :class:`MessageBuffer` (little-endian, 64-bit counts before
  sequences) and a :class:`Transport` moving raw bytes between ranks;
* packing layer: :class:`PackInfo` implementations (de)serialize one data
  structure between two neighbouring primitives and never communicate;
* control layer: :class:`Controller` walks the primitive graph along one
  direction (e.g. FACE -> EDGE), copies locally when both primitives share a
  rank and goes through the transport otherwise.
"""
from __future__ import annotations

import struct
from collections import defaultdict, deque

import numpy as np

from .mesh import PrimitiveKind


class CommunicationError(RuntimeError):
    pass


class MessageBuffer:
    """Append/extract typed values; extraction order equals append order."""

    def __init__(self, data: bytes | bytearray | None = None):
        self._data = bytearray(data) if data is not None else bytearray()
        self._pos = 0

    def __len__(self):
        return len(self._data)

    def tobytes(self) -> bytes:
        return bytes(self._data)

    @property
    def exhausted(self) -> bool:
        return self._pos == len(self._data)

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise CommunicationError(f"buffer underrun: need {n} bytes at {self._pos}/{len(self._data)}")
        out = bytes(self._data[self._pos:self._pos + n])
        self._pos += n
        return out

    def put_u32(self, v: int):
        self._data += struct.pack("<I", v)
        return self

    def get_u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def put_int(self, v: int):
        self._data += struct.pack("<q", int(v))
        return self

    def get_int(self) -> int:
        return struct.unpack("<q", self._take(8))[0]

    def put_float(self, v: float):
        self._data += struct.pack("<d", float(v))
        return self

    def get_float(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def put_bytes(self, b: bytes):
        self.put_int(len(b))
        self._data += b
        return self

    def get_bytes(self) -> bytes:
        return self._take(self.get_int())

    def put_str(self, s: str):
        return self.put_bytes(s.encode())

    def get_str(self) -> str:
        return self.get_bytes().decode()

    def put_ints(self, seq):
        self.put_int(len(seq))
        for v in seq:
            self.put_int(v)
        return self

    def get_ints(self) -> list[int]:
        return [self.get_int() for _ in range(self.get_int())]

    def put_array(self, arr: np.ndarray):
        arr = np.ascontiguousarray(arr)
        self.put_str(arr.dtype.newbyteorder("<").str)
        self.put_int(arr.size)
        self._data += arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        return self

    def get_array(self) -> np.ndarray:
        dt = np.dtype(self.get_str())
        n = self.get_int()
        return np.frombuffer(self._take(n * dt.itemsize), dtype=dt).astype(dt.newbyteorder("="))


class Transport:
    """Non-blocking point-to-point byte transport between logical ranks."""

    def send(self, source: int, target: int, tag, payload: bytes):
        raise NotImplementedError

    def recv(self, target: int, tag, source: int | None = None) -> tuple[int, bytes]:
        raise NotImplementedError


class InProcessTransport(Transport):
    """Deterministic in-memory queues; FIFO per (source, target, tag).

    ``log`` records ``(source, target, tag)`` of every send so tests can tap
    the traffic.
    """

    def __init__(self, ranks: int):
        self.ranks = ranks
        self._queues: dict = defaultdict(deque)
        self.log: list = []
        self.bytes_sent = 0

    def send(self, source, target, tag, payload):
        if not (0 <= target < self.ranks and 0 <= source < self.ranks):
            raise CommunicationError(f"rank out of range: {source} -> {target}")
        self._queues[(target, tag)].append((source, bytes(payload)))
        self.log.append((source, target, tag))
        self.bytes_sent += len(payload)

    def recv(self, target, tag, source=None):
        q = self._queues.get((target, tag))
        if not q:
            raise CommunicationError(f"no message for rank {target} with tag {tag!r}")
        if source is None:
            return q.popleft()
        for i, (src, data) in enumerate(q):
            if src == source:
                del q[i]
                return src, data
        raise CommunicationError(f"no message from rank {source} to {target} with tag {tag!r}")

    def pending(self) -> int:
        return sum(len(q) for q in self._queues.values())


class PackInfo:
    """(De)serialization of one data structure between adjacent primitives."""

    def pack(self, sender, receiver_id: int, buf: MessageBuffer):
        raise NotImplementedError

    def unpack(self, receiver, sender_id: int, buf: MessageBuffer):
        raise NotImplementedError

    def local_copy(self, sender, receiver):
        buf = MessageBuffer()
        self.pack(sender, receiver.id, buf)
        self.unpack(receiver, sender.id, MessageBuffer(buf.tobytes()))


V, E, F = PrimitiveKind.VERTEX, PrimitiveKind.EDGE, PrimitiveKind.FACE
VERTEX_TO_EDGE = (V, E)
EDGE_TO_FACE = (E, F)
FACE_TO_EDGE = (F, E)
EDGE_TO_VERTEX = (E, V)
ADJACENT_DIRECTIONS = (VERTEX_TO_EDGE, EDGE_TO_VERTEX, EDGE_TO_FACE, FACE_TO_EDGE)

# Ghost-refresh order.  Edge halos relay face-border ghosts and vertex halos
# relay edge halos, so each direction must complete before the next packs.
SYNC_ORDER = (VERTEX_TO_EDGE, EDGE_TO_FACE, FACE_TO_EDGE, EDGE_TO_VERTEX)


class Controller:
    """Drives PackInfos along primitive-graph directions over a transport."""

    def __init__(self, graphs, transport: Transport):
        self.graphs = graphs
        self.transport = transport
        self._seq = 0
        self._plans = {}

    def _check(self, direction):
        if direction not in ADJACENT_DIRECTIONS:
            raise CommunicationError(f"communication only along graph edges, not {direction}")

    def _plan(self, direction):
        """Per graph: co-resident (sender, receiver) pairs, remote sends and remote receives."""
        key = (direction, tuple(g.version for g in self.graphs))
        plan = self._plans.get(key)
        if plan is None:
            src_kind, dst_kind = direction
            plan = []
            for g in self.graphs:
                local, remote = [], []
                for p in g.local(src_kind):
                    for q in p.neighbors.get(dst_kind, ()):
                        owner = g.rank_of[q]
                        if owner == g.rank:
                            local.append((p, g.primitives[q]))
                        else:
                            remote.append((p, q, owner))
                incoming = [(q, p, g.rank_of[p]) for q in g.local(dst_kind)
                            for p in q.neighbors.get(src_kind, ()) if g.rank_of[p] != g.rank]
                plan.append((g.rank, local, remote, incoming))
            self._plans = {k: v for k, v in self._plans.items() if k[1] == key[1]}
            self._plans[key] = plan
        return plan

    def start(self, info: PackInfo, direction, channel="sync"):
        """Issue all sends of ``direction``; co-resident pairs are copied directly."""
        self._check(direction)
        src_kind, dst_kind = direction
        tag_base = (channel, int(src_kind), int(dst_kind))
        for rank, local, remote, _ in self._plan(direction):
            for p, q in local:
                info.local_copy(p, q)
            for p, q, owner in remote:
                buf = MessageBuffer()
                try:
                    info.pack(p, q, buf)
                except Exception as exc:
                    raise CommunicationError(
                        f"packing {direction} {p.id}->{q} failed: {exc}") from exc
                self.transport.send(rank, owner, tag_base + (p.id, q), buf.tobytes())

    def wait(self, info: PackInfo, direction, channel="sync"):
        """Receive and unpack everything sent by :meth:`start` for ``direction``."""
        src_kind, dst_kind = direction
        tag_base = (channel, int(src_kind), int(dst_kind))
        for rank, _, _, incoming in self._plan(direction):
            for q, p, owner in incoming:
                try:
                    _, data = self.transport.recv(rank, tag_base + (p, q.id), source=owner)
                    buf = MessageBuffer(data)
                    info.unpack(q, p, buf)
                except CommunicationError as exc:
                    raise CommunicationError(f"{direction} {p}->{q.id}: {exc}") from exc

    def communicate(self, info: PackInfo, direction, channel="sync"):
        self.start(info, direction, channel)
        self.wait(info, direction, channel)

    def sync(self, info: PackInfo, directions=SYNC_ORDER, channel="sync"):
        for d in directions:
            self.communicate(info, d, channel)

    # -- collectives --------------------------------------------------------

    def reduce_partials(self, partials: list[dict], op=None):
        """Combine per-primitive partial results into one value on every rank.

        ``partials[r]`` maps primitive ID -> partial value on rank ``r``.  All
        partials are gathered on rank 0, combined by a fixed pairwise tree in
        primitive-ID order (independent of the partition) and broadcast.
        """
        op = op or (lambda a, b: a + b)
        self._seq += 1
        tag = ("reduce", self._seq)
        for g, part in zip(self.graphs, partials):
            buf = MessageBuffer()
            ids = sorted(part)
            buf.put_ints(ids)
            for i in ids:
                buf.put_float(part[i])
            self.transport.send(g.rank, 0, tag, buf.tobytes())
        gathered = {}
        for r in range(len(self.graphs)):
            _, data = self.transport.recv(0, tag, source=r)
            buf = MessageBuffer(data)
            ids = buf.get_ints()
            for i in ids:
                gathered[i] = buf.get_float()
        vals = [gathered[i] for i in sorted(gathered)]
        total = tree_reduce(vals, op)
        btag = ("bcast", self._seq)
        for r in range(len(self.graphs)):
            self.transport.send(0, r, btag, MessageBuffer().put_float(total).tobytes())
        out = [MessageBuffer(self.transport.recv(r, btag)[1]).get_float() for r in range(len(self.graphs))]
        return out[0]

    def gather_arrays(self, parts: list[dict]):
        """Gather ``{id: ndarray}`` maps from all ranks onto rank 0.

        Returns the merged map and the source rank of every id, which
        :meth:`scatter_arrays` uses to route the answer back.
        """
        self._seq += 1
        tag = ("gather", self._seq)
        for g, part in zip(self.graphs, parts):
            buf = MessageBuffer()
            buf.put_ints(sorted(part))
            for i in sorted(part):
                buf.put_array(part[i])
            self.transport.send(g.rank, 0, tag, buf.tobytes())
        out, owners = {}, {}
        for r in range(len(self.graphs)):
            buf = MessageBuffer(self.transport.recv(0, tag, source=r)[1])
            for i in buf.get_ints():
                out[i] = buf.get_array()
                owners[i] = r
        return out, owners

    def scatter_arrays(self, arrays: dict, owners: dict) -> list[dict]:
        """Send ``{id: ndarray}`` from rank 0 to ``owners[id]``."""
        self._seq += 1
        tag = ("scatter", self._seq)
        per_rank = defaultdict(dict)
        for i, a in arrays.items():
            per_rank[owners[i]][i] = a
        for r in range(len(self.graphs)):
            buf = MessageBuffer()
            part = per_rank[r]
            buf.put_ints(sorted(part))
            for i in sorted(part):
                buf.put_array(part[i])
            self.transport.send(0, r, tag, buf.tobytes())
        out = []
        for r in range(len(self.graphs)):
            buf = MessageBuffer(self.transport.recv(r, tag, source=0)[1])
            ids = buf.get_ints()
            out.append({i: buf.get_array() for i in ids})
        return out


def tree_reduce(values, op=None):
    """Pairwise (binary tree) reduction with a fixed association order."""
    op = op or (lambda a, b: a + b)
    vals = list(values)
    if not vals:
        return 0.0
    while len(vals) > 1:
        nxt = [op(vals[i], vals[i + 1]) for i in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0]
