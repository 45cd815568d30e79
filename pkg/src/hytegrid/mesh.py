"""Coarse triangle meshes and the setup-phase macro-primitive graph.

Mesh files are plain ASCII::

    NV NT
    x y flag          # NV vertex lines
    v0 v1 v2 flag     # NT triangle lines, 0-based indices

``#`` starts a comment.  Vertex flags mark boundaries (0 = interior).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"{message}, line {line}")


class PrimitiveKind(enum.IntEnum):
    VERTEX = 0
    EDGE = 1
    FACE = 2


@dataclass(frozen=True)
class UnstructuredMesh:
    vertices: np.ndarray          # (NV, 2) float
    vertex_flags: np.ndarray      # (NV,) int
    triangles: np.ndarray         # (NT, 3) int, counter-clockwise
    triangle_flags: np.ndarray    # (NT,) int

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


def signed_area(p0, p1, p2) -> float:
    return 0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))


def _content_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            yield lineno, body.split()


def parse_mesh(text: str) -> UnstructuredMesh:
    lines = list(_content_lines(text))
    if not lines:
        raise MeshError("empty mesh file")
    lineno, head = lines[0]
    try:
        nv, nt = (int(v) for v in head)
    except ValueError:
        raise MeshError("malformed header, expected 'NV NT'", lineno) from None
    if nv < 3 or nt < 1:
        raise MeshError("mesh needs at least 3 vertices and 1 triangle", lineno)
    if len(lines) != 1 + nv + nt:
        last = lines[-1][0]
        raise MeshError(f"expected {nv} vertex and {nt} triangle lines, found {len(lines) - 1}", last)

    verts = np.empty((nv, 2))
    vflags = np.empty(nv, dtype=np.int64)
    for i, (lineno, tok) in enumerate(lines[1:1 + nv]):
        try:
            if len(tok) != 3:
                raise ValueError
            verts[i] = float(tok[0]), float(tok[1])
            vflags[i] = int(tok[2])
        except ValueError:
            raise MeshError("malformed vertex line, expected 'x y flag'", lineno) from None
        if not np.all(np.isfinite(verts[i])):
            raise MeshError("non-finite vertex coordinate", lineno)

    tris = np.empty((nt, 3), dtype=np.int64)
    tflags = np.empty(nt, dtype=np.int64)
    seen: dict[frozenset, int] = {}
    for i, (lineno, tok) in enumerate(lines[1 + nv:]):
        try:
            if len(tok) != 4:
                raise ValueError
            idx = [int(t) for t in tok[:3]]
            tflags[i] = int(tok[3])
        except ValueError:
            raise MeshError("malformed triangle line, expected 'v0 v1 v2 flag'", lineno) from None
        for v in idx:
            if not 0 <= v < nv:
                raise MeshError(f"index out of range ({v} not in [0, {nv}))", lineno)
        if len(set(idx)) != 3:
            raise MeshError("triangle repeats a vertex index", lineno)
        key = frozenset(idx)
        if key in seen:
            raise MeshError(f"duplicate triangle (first on line {seen[key]})", lineno)
        seen[key] = lineno
        area = signed_area(*verts[idx])
        if area == 0.0:
            raise MeshError("degenerate (zero-area) triangle", lineno)
        if area < 0:
            idx = [idx[0], idx[2], idx[1]]
        tris[i] = idx
    return UnstructuredMesh(verts, vflags, tris, tflags)


def format_mesh(mesh: UnstructuredMesh) -> str:
    out = [f"{mesh.n_vertices} {mesh.n_triangles}"]
    out += [f"{float(x)!r} {float(y)!r} {int(f)}" for (x, y), f in zip(mesh.vertices, mesh.vertex_flags)]
    out += [f"{a} {b} {c} {int(f)}" for (a, b, c), f in zip(mesh.triangles, mesh.triangle_flags)]
    return "\n".join(out) + "\n"


def read_mesh(path) -> UnstructuredMesh:
    with open(path) as fh:
        return parse_mesh(fh.read())


def make_mesh(vertices, vertex_flags, triangles, triangle_flags=None) -> UnstructuredMesh:
    """Build a mesh from Python data through the same validation as files."""
    tris = np.asarray(triangles, dtype=np.int64)
    tf = np.zeros(len(tris), dtype=np.int64) if triangle_flags is None else triangle_flags
    mesh = UnstructuredMesh(np.asarray(vertices, dtype=float),
                            np.asarray(vertex_flags, dtype=np.int64), tris,
                            np.asarray(tf, dtype=np.int64))
    return parse_mesh(format_mesh(mesh))


# ---------------------------------------------------------------------------
# setup graph

FACE_SLOTS = ((0, 1), (0, 2), (1, 2))


@dataclass
class SetupPrimitive:
    id: int
    kind: PrimitiveKind
    coords: tuple                 # vertex coordinates, one (x, y) per corner
    vertex_ids: tuple             # VERTEX primitive IDs of the corners
    neighbors: dict = field(default_factory=dict)   # PrimitiveKind -> sorted ID list
    flag: int = 0
    # FACE only: EDGE id per slot and whether the edge runs along the slot
    edge_slots: tuple = ()
    slot_aligned: tuple = ()


@dataclass
class SetupGraph:
    primitives: dict              # id -> SetupPrimitive

    def of_kind(self, kind: PrimitiveKind):
        return [p for p in self.primitives.values() if p.kind is kind]

    def ids(self, kind: PrimitiveKind | None = None):
        return sorted(i for i, p in self.primitives.items() if kind is None or p.kind is kind)

    def graph_edges(self):
        """Undirected ``(low-dim id, high-dim id)`` pairs of the primitive graph."""
        out = []
        for p in self.primitives.values():
            for kind in (PrimitiveKind.EDGE, PrimitiveKind.FACE):
                if kind == p.kind + 1:
                    out += [(p.id, q) for q in p.neighbors.get(kind, ())]
        return sorted(out)

    def counts(self):
        return {k: len(self.of_kind(k)) for k in PrimitiveKind}


def _edge_flag(fa: int, fb: int, n_faces: int) -> int:
    if n_faces != 1 or fa == 0 or fb == 0:
        return 0
    return fa if fa == fb else max(fa, fb)


def build_setup_graph(mesh: UnstructuredMesh) -> SetupGraph:
    nv = mesh.n_vertices
    pairs = sorted({tuple(sorted((int(t[a]), int(t[b])))) for t in mesh.triangles
                    for a, b in FACE_SLOTS})
    edge_id = {pair: nv + i for i, pair in enumerate(pairs)}
    face0 = nv + len(pairs)

    prims: dict[int, SetupPrimitive] = {}
    for v in range(nv):
        prims[v] = SetupPrimitive(v, PrimitiveKind.VERTEX, (tuple(mesh.vertices[v]),), (v,),
                                  {PrimitiveKind.EDGE: [], PrimitiveKind.FACE: []},
                                  int(mesh.vertex_flags[v]))
    for (a, b), eid in edge_id.items():
        prims[eid] = SetupPrimitive(eid, PrimitiveKind.EDGE,
                                    (tuple(mesh.vertices[a]), tuple(mesh.vertices[b])), (a, b),
                                    {PrimitiveKind.VERTEX: [a, b], PrimitiveKind.FACE: []})
        prims[a].neighbors[PrimitiveKind.EDGE].append(eid)
        prims[b].neighbors[PrimitiveKind.EDGE].append(eid)
    for i, t in enumerate(mesh.triangles):
        fid = face0 + i
        t = tuple(int(v) for v in t)
        slots, aligned = [], []
        for a, b in FACE_SLOTS:
            eid = edge_id[tuple(sorted((t[a], t[b])))]
            slots.append(eid)
            aligned.append(t[a] < t[b])
            prims[eid].neighbors[PrimitiveKind.FACE].append(fid)
        for v in t:
            prims[v].neighbors[PrimitiveKind.FACE].append(fid)
        prims[fid] = SetupPrimitive(fid, PrimitiveKind.FACE, tuple(tuple(mesh.vertices[v]) for v in t),
                                    t, {PrimitiveKind.EDGE: sorted(slots),
                                        PrimitiveKind.VERTEX: sorted(t)},
                                    int(mesh.triangle_flags[i]), tuple(slots), tuple(aligned))
    for p in prims.values():
        for k in p.neighbors:
            p.neighbors[k] = sorted(p.neighbors[k])
        if p.kind is PrimitiveKind.EDGE:
            a, b = p.vertex_ids
            p.flag = _edge_flag(prims[a].flag, prims[b].flag, len(p.neighbors[PrimitiveKind.FACE]))
    return SetupGraph(prims)


# ---------------------------------------------------------------------------
# fixture meshes

def single_triangle() -> UnstructuredMesh:
    return make_mesh([(0, 0), (1, 0), (0, 1)], [1, 1, 1], [(0, 1, 2)])


def unit_square() -> UnstructuredMesh:
    """Unit square split along the diagonal (0,0)-(1,1) into two faces."""
    return make_mesh([(0, 0), (1, 0), (1, 1), (0, 1)], [1, 1, 1, 1],
                     [(0, 1, 2), (0, 2, 3)])


def square_ring() -> UnstructuredMesh:
    """Square ring: outer square [-2,2]^2 minus inner [-1,1]^2, 8 faces."""
    outer = [(-2, -2), (2, -2), (2, 2), (-2, 2)]
    inner = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
    tris = []
    for i in range(4):
        j = (i + 1) % 4
        tris += [(i, j, 4 + j), (i, 4 + j, 4 + i)]
    return make_mesh(outer + inner, [2] * 4 + [1] * 4, tris)


def face_chain(n_faces: int = 4) -> UnstructuredMesh:
    """Strip of triangles where face i touches faces i-1 and i+1 only."""
    top = n_faces // 2 + 1
    bottom = n_faces - n_faces // 2 + 1
    verts = [(float(i), 0.0) for i in range(bottom)] + [(i + 0.5, 1.0) for i in range(top)]
    tris = []
    for k in range(n_faces):
        i = k // 2
        if k % 2 == 0:
            tris.append((i, i + 1, bottom + i))
        else:
            tris.append((i + 1, bottom + i + 1, bottom + i))
    return make_mesh(verts, [1] * len(verts), tris)


def rectangle(width: float, height: float, nx: int, ny: int, flag_fn=None) -> UnstructuredMesh:
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    verts, flags = [], []
    for j in range(ny + 1):
        for i in range(nx + 1):
            verts.append((xs[i], ys[j]))
            on_bnd = i in (0, nx) or j in (0, ny)
            flags.append(flag_fn(i, j) if flag_fn else int(on_bnd))
    tris = []
    for j in range(ny):
        for i in range(nx):
            v = j * (nx + 1) + i
            tris += [(v, v + 1, v + nx + 2), (v, v + nx + 2, v + nx + 1)]
    return make_mesh(verts, flags, tris)


CHANNEL_WALL, CHANNEL_OUTFLOW = 1, 2


def channel(length: float = 2.0, height: float = 1.0, nx: int = 4, ny: int = 2) -> UnstructuredMesh:
    """Channel with Dirichlet walls/inflow (flag 1) and outflow at x=length (flag 2).

    Outflow flags sit on the non-corner right-side vertices so that right-side
    edges pick up the outflow flag while corners stay no-slip.
    """
    if ny < 2:
        raise ValueError("channel needs ny >= 2 so the outflow side has an inner vertex")

    def flag(i, j):
        if i == nx and 0 < j < ny:
            return CHANNEL_OUTFLOW
        return CHANNEL_WALL if (i == 0 or j in (0, ny) or i == nx) else 0

    return rectangle(length, height, nx, ny, flag)


ANNULUS_INNER, ANNULUS_OUTER = 1, 2


def annulus(n_theta: int = 8, n_r: int = 1, r_in: float = 1.0, r_out: float = 2.0) -> UnstructuredMesh:
    """Structured ring triangulation with ``2 * n_theta * n_r`` faces."""
    if n_theta < 3 or n_r < 1:
        raise ValueError("annulus needs n_theta >= 3 and n_r >= 1")
    verts, flags = [], []
    for j in range(n_r + 1):
        r = r_in + (r_out - r_in) * j / n_r
        for i in range(n_theta):
            phi = 2 * math.pi * i / n_theta
            verts.append((r * math.cos(phi), r * math.sin(phi)))
            flags.append(ANNULUS_INNER if j == 0 else ANNULUS_OUTER if j == n_r else 0)
    tris = []
    for j in range(n_r):
        for i in range(n_theta):
            a, b = j * n_theta + i, j * n_theta + (i + 1) % n_theta
            c, d = a + n_theta, b + n_theta
            if (i + j) % 2 == 0:
                tris += [(a, b, d), (a, d, c)]
            else:
                tris += [(a, b, c), (b, d, c)]
    return make_mesh(verts, flags, tris)


def annulus_faces(n_faces: int, r_in: float = 1.0, r_out: float = 2.0) -> UnstructuredMesh:
    """Annulus fixture by face count (8..256); layers are added as the count grows."""
    if n_faces % 2 or n_faces < 8:
        raise ValueError("face count must be even and >= 8")
    n_r = 1
    while n_faces // (2 * n_r) > 8 * n_r and (n_faces // 2) % (2 * n_r) == 0:
        n_r *= 2
    return annulus(n_faces // (2 * n_r), n_r, r_in, r_out)


FIXTURES = {
    "triangle": single_triangle,
    "square": unit_square,
    "ring": square_ring,
    "chain": face_chain,
    "channel": channel,
    "annulus": annulus,
}
