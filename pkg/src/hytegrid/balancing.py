"""Rank assignment of the macro-primitive graph and partition quality metrics."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from .indexing import FunctionKind, owned_count
from .mesh import PrimitiveKind, SetupGraph

EPSILON = 0.10


@dataclass
class WeightedGraph:
    """Primitive graph with node weights (work units)."""

    weights: dict                  # id -> non-negative weight
    edges: list                    # undirected (id, id) pairs, adjacent dimensions only
    kinds: dict                    # id -> PrimitiveKind
    neighbors: dict                # id -> {PrimitiveKind: [ids]}

    def ids(self, kind: PrimitiveKind | None = None):
        return sorted(i for i, k in self.kinds.items() if kind is None or k is kind)

    def face_adjacency(self):
        """Face pairs sharing an edge."""
        pairs = set()
        for e in self.ids(PrimitiveKind.EDGE):
            fs = self.neighbors[e].get(PrimitiveKind.FACE, [])
            for i in range(len(fs)):
                for j in range(i + 1, len(fs)):
                    pairs.add((fs[i], fs[j]))
        return sorted(pairs)

    @property
    def total(self) -> float:
        return float(sum(self.weights.values()))


def weighted_graph(setup: SetupGraph, level: int | None = None,
                   kind: FunctionKind = FunctionKind.P1) -> WeightedGraph:
    """Weights are owned DoF counts at ``level`` (unit weights when ``None``)."""
    weights = {}
    for pid, p in setup.primitives.items():
        if level is None:
            weights[pid] = 1.0
        else:
            weights[pid] = float(owned_count(kind, p.kind, level))
    return WeightedGraph(weights, setup.graph_edges(),
                         {pid: p.kind for pid, p in setup.primitives.items()},
                         {pid: p.neighbors for pid, p in setup.primitives.items()})


@dataclass
class PartitionReport:
    ranks: int
    loads: list
    bound: float
    feasible: bool = True
    notes: list = field(default_factory=list)


def partition_round_robin(setup: SetupGraph, ranks: int) -> dict:
    """Within each primitive kind, the i-th primitive (by ID) goes to rank ``i mod P``."""
    if ranks < 1:
        raise ValueError("need at least one rank")
    out = {}
    for kind in PrimitiveKind:
        for i, pid in enumerate(setup.ids(kind)):
            out[pid] = i % ranks
    return out


def rank_loads(wg: WeightedGraph, assignment: dict, ranks: int) -> list:
    loads = [0.0] * ranks
    for pid, r in assignment.items():
        loads[r] += wg.weights[pid]
    return loads


def partition_greedy_edgecut(wg: WeightedGraph, ranks: int, epsilon: float = EPSILON):
    """Greedy BFS growth of face regions, then co-location of edges and vertices.

    Each face carries its own weight plus an equal share of its edges' and
    vertices' weights, so growing regions to ``total / P`` balances the final
    load.  Returns ``(assignment, PartitionReport)``.
    """
    if ranks < 1:
        raise ValueError("need at least one rank")
    if any(w < 0 for w in wg.weights.values()):
        raise ValueError("weights must be non-negative")
    faces = wg.ids(PrimitiveKind.FACE)
    share = {f: wg.weights[f] for f in faces}
    for kind in (PrimitiveKind.EDGE, PrimitiveKind.VERTEX):
        for pid in wg.ids(kind):
            fs = wg.neighbors[pid].get(PrimitiveKind.FACE, [])
            for f in fs:
                share[f] += wg.weights[pid] / len(fs)
    adj = {f: [] for f in faces}
    for a, b in wg.face_adjacency():
        adj[a].append(b)
        adj[b].append(a)

    target = wg.total / ranks
    owner: dict = {}
    unassigned = set(faces)
    for r in range(ranks):
        if not unassigned:
            break
        if r == ranks - 1:
            for f in unassigned:
                owner[f] = r
            unassigned.clear()
            break
        load = 0.0
        queue = deque()
        while unassigned and load < target:
            if not queue:
                # new seed: unassigned face with the fewest unassigned neighbours
                seed = min(unassigned, key=lambda f: (sum(g in unassigned for g in adj[f]), f))
                queue.append(seed)
            f = queue.popleft()
            if f not in unassigned:
                continue
            if load > 0 and load + share[f] / 2 > target:
                break
            owner[f] = r
            unassigned.discard(f)
            load += share[f]
            queue.extend(g for g in sorted(adj[f]) if g in unassigned)

    assignment = dict(owner)
    loads = [0.0] * ranks
    for f, r in owner.items():
        loads[r] += wg.weights[f]
    # edges first, then vertices: join the least-loaded neighbouring face rank
    for kind in (PrimitiveKind.EDGE, PrimitiveKind.VERTEX):
        for pid in wg.ids(kind):
            cand = sorted({owner[f] for f in wg.neighbors[pid].get(PrimitiveKind.FACE, [])})
            r = min(cand, key=lambda c: (loads[c], c)) if cand else 0
            assignment[pid] = r
            loads[r] += wg.weights[pid]

    _rebalance(wg, owner, assignment, loads)

    bound = (1.0 + epsilon) * target
    report = PartitionReport(ranks, loads, bound)
    heaviest = max(wg.weights.values(), default=0.0)
    if heaviest > bound:
        report.feasible = False
        report.bound = heaviest
        report.notes.append(f"single primitive weight {heaviest:g} exceeds bound {bound:g}; bound relaxed")
    if max(loads) > report.bound:
        report.feasible = False
        report.notes.append(f"max rank load {max(loads):g} exceeds bound {report.bound:g}")
    return assignment, report


def _rebalance(wg, owner, assignment, loads, passes=4):
    """Move edges/vertices between their face ranks while the max load drops."""
    movable = wg.ids(PrimitiveKind.EDGE) + wg.ids(PrimitiveKind.VERTEX)
    for _ in range(passes):
        moved = False
        for pid in movable:
            r = assignment[pid]
            w = wg.weights[pid]
            cand = sorted({owner[f] for f in wg.neighbors[pid].get(PrimitiveKind.FACE, [])} - {r})
            if not cand or w == 0:
                continue
            c = min(cand, key=lambda q: (loads[q], q))
            if loads[c] + w < loads[r]:
                loads[r] -= w
                loads[c] += w
                assignment[pid] = c
                moved = True
        if not moved:
            break


def edge_cut(wg: WeightedGraph, assignment: dict) -> int:
    """Number of primitive-graph edges whose endpoints live on different ranks."""
    return sum(assignment[a] != assignment[b] for a, b in wg.edges)


def face_cut(wg: WeightedGraph, assignment: dict) -> int:
    """Cut of the face-adjacency graph (faces sharing an edge)."""
    return sum(assignment[a] != assignment[b] for a, b in wg.face_adjacency())


def format_assignment(assignment: dict) -> str:
    return "".join(f"{pid} {assignment[pid]}\n" for pid in sorted(assignment))


def parse_assignment(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].split()
        if not body:
            continue
        if len(body) != 2:
            raise ValueError(f"expected 'primitiveID rank', line {lineno}")
        out[int(body[0])] = int(body[1])
    return out
