"""DG0 cell fields and explicit upwind finite-volume transport.

A :class:`CellFunction` stores one value per micro-triangle of each macro-face
(``n**2`` cells, up-cells then down-cells per :class:`CellLayout`).  Face ghosts
are the neighbouring face's up-cells along each macro-edge; edges only relay
them, so all traffic stays on face-edge graph links.
"""
from __future__ import annotations

import numpy as np

from ..communication import EDGE_TO_FACE, EDGE_TO_VERTEX, FACE_TO_EDGE, MessageBuffer, PackInfo
from ..functions import ScalarFunction
from ..indexing import FunctionKind, Orientation, cell_layout, slot_walk
from ..layout import layout
from ..mesh import PrimitiveKind
from ..primitives import DataHandle, Domain

CELL_SYNC = (FACE_TO_EDGE, EDGE_TO_FACE)
FORMS = ("conservative", "advective")


class CFLViolation(ValueError):
    """Raised when a time step exceeds the stable limit; ``limit`` holds the bound."""

    def __init__(self, dt: float, limit: float):
        super().__init__(f"time step {dt:.6g} exceeds CFL limit {limit:.6g}")
        self.dt, self.limit = dt, limit


def _serialize(arr) -> bytes:
    return MessageBuffer().put_array(arr).tobytes()


def _deserialize(raw: bytes):
    return MessageBuffer(raw).get_array().copy()


def _border_order(prim, edge_id):
    s = prim.edge_slots.index(edge_id)
    return s, Orientation.FORWARD if prim.slot_aligned[s] else Orientation.REVERSED


class CellPackInfo(PackInfo):
    """Face border up-cells -> edge relay -> opposite face ghost block."""

    def __init__(self, fn: "CellFunction"):
        self.f = fn

    def _outgoing(self, sender, receiver_id):
        arr = sender.data[self.f.handle_id]
        n = self.f.n
        if sender.kind is PrimitiveKind.FACE:
            s, o = _border_order(sender, receiver_id)
            return arr[self.f.cells.border_cells(s, o)]
        faces = sorted(sender.neighbors[PrimitiveKind.FACE])
        others = [i for i, f in enumerate(faces) if f != receiver_id]
        if not others:
            return np.zeros(0)
        return arr[others[0] * n:(others[0] + 1) * n]

    def _store(self, receiver, sender_id, data):
        arr = receiver.data[self.f.handle_id]
        n = self.f.n
        if len(data) == 0:
            return
        if len(data) != n:
            raise ValueError(f"expected {n} cell values, got {len(data)}")
        if receiver.kind is PrimitiveKind.EDGE:
            i = sorted(receiver.neighbors[PrimitiveKind.FACE]).index(sender_id)
        else:
            i = self.f.cells.size // n + receiver.edge_slots.index(sender_id)
        arr[i * n:(i + 1) * n] = data

    def pack(self, sender, receiver_id, buf):
        buf.put_array(np.ascontiguousarray(self._outgoing(sender, receiver_id)))

    def unpack(self, receiver, sender_id, buf):
        self._store(receiver, sender_id, buf.get_array())

    def local_copy(self, sender, receiver):
        self._store(receiver, sender.id, self._outgoing(sender, receiver.id).copy())


class CellFunction:
    """One value per micro-triangle at a single level."""

    def __init__(self, domain: Domain, name: str, level: int):
        self.domain, self.name, self.level = domain, name, level
        self.n = 2**level
        self.cells = cell_layout(level)
        self.handle_id = domain.new_handle_id()
        domain.add_data(DataHandle(self.handle_id, self._init, _serialize, _deserialize, name))

    def _init(self, prim):
        n = self.n
        if prim.kind is PrimitiveKind.FACE:
            return np.zeros(self.cells.size + 3 * n)     # own cells + one ghost block per slot
        if prim.kind is PrimitiveKind.EDGE:
            return np.zeros(len(prim.neighbors[PrimitiveKind.FACE]) * n)
        return np.zeros(0)

    def faces(self):
        return [p for _, p in self.domain.local_items(PrimitiveKind.FACE)]

    def values(self, prim):
        """Owned cell values of a face (a view)."""
        return prim.data[self.handle_id][:self.cells.size]

    def ghosts(self, prim, edge_id):
        n = self.n
        i = self.cells.size // n + prim.edge_slots.index(edge_id)
        return prim.data[self.handle_id][i * n:(i + 1) * n]

    def sync(self):
        self.domain.controller.sync(CellPackInfo(self), CELL_SYNC, channel=(self.handle_id, "cells"))

    def interpolate(self, expr):
        """Set each cell to ``expr`` at its centroid."""
        for p in self.faces():
            g = cell_geometry(p, self.level)
            self.values(p)[:] = np.broadcast_to(expr(g.centroid[:, 0], g.centroid[:, 1]), (self.cells.size,))

    def partials(self, fn):
        """``[{face id: fn(prim)}]`` per rank, for tree reductions."""
        return [{p.id: float(fn(p)) for p in g.local(PrimitiveKind.FACE)} for g in self.domain.graphs]

    def integral(self) -> float:
        """Sum over cells of ``|K| T``."""
        parts = self.partials(lambda p: np.dot(cell_geometry(p, self.level).area, self.values(p)))
        return self.domain.controller.reduce_partials(parts)

    def min(self) -> float:
        parts = self.partials(lambda p: self.values(p).min())
        return self.domain.controller.reduce_partials(parts, min)

    def max(self) -> float:
        parts = self.partials(lambda p: self.values(p).max())
        return self.domain.controller.reduce_partials(parts, max)

    def state_bytes(self) -> bytes:
        return b"".join(self.values(p).tobytes() for p in sorted(self.faces(), key=lambda q: q.id))


class CellGeometry:
    """Micro-cell areas, centroids and micro-edge connectivity of one face.

    ``pairs``: interior micro-edges as (up cell, down cell, node P, node Q,
    outward normal of the up cell scaled by length).  ``border[edge_id]``:
    per segment in edge order the cell, its two nodes and the normal out of
    this face.  Nodes are flat lattice indices ``a * (n + 1) + b``.  Border
    segment geometry is computed from the macro-edge endpoints so both faces
    of an edge see bit-identical values.
    """

    def __init__(self, prim, level):
        n = 2**level
        self.n = n
        cl = cell_layout(level)
        c0, c1, c2 = (np.asarray(c, dtype=float) for c in prim.coords)

        def node(a, b):
            return np.asarray(a) * (n + 1) + np.asarray(b)

        a, b = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        self.xy = (c0 + (a.ravel()[:, None] / n) * (c1 - c0) + (b.ravel()[:, None] / n) * (c2 - c0))
        uc, ur = cl.up_c, cl.up_r
        dc, dr = cl.down_c, cl.down_r
        nodes = np.zeros((cl.size, 3), dtype=np.int64)
        nodes[cl.up] = np.stack([node(uc, ur), node(uc + 1, ur), node(uc, ur + 1)], axis=1)
        if len(cl.down):
            nodes[cl.down] = np.stack([node(dc + 1, dr), node(dc + 1, dr + 1), node(dc, dr + 1)], axis=1)
        self.nodes = nodes
        p = self.xy[nodes]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        self.area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        self.centroid = p.mean(axis=1)

        up, down, pp, qq = [], [], [], []
        for c, r, i in zip(uc, ur, cl.up):
            if r > 0:
                up.append(i), down.append(cl.down_index(c, r - 1)), pp.append(node(c, r)), qq.append(node(c + 1, r))
            if c > 0:
                up.append(i), down.append(cl.down_index(c - 1, r)), pp.append(node(c, r)), qq.append(node(c, r + 1))
            if c + r < n - 1:
                up.append(i), down.append(cl.down_index(c, r)), pp.append(node(c + 1, r)), qq.append(node(c, r + 1))
        self.up = np.asarray(up, dtype=np.int64)
        self.down = np.asarray(down, dtype=np.int64)
        self.p = np.asarray(pp, dtype=np.int64)
        self.q = np.asarray(qq, dtype=np.int64)
        self.normal = self._outward(self.xy[self.p], self.xy[self.q], self.centroid[self.up])
        self.length = np.hypot(self.normal[:, 0], self.normal[:, 1])

        self.border = {}
        for eid in prim.edge_slots:
            s, o = _border_order(prim, eid)
            cells = cl.border_cells(s, o)
            cols, rows = slot_walk(n, s, 0)
            line = node(cols, rows)
            if o is Orientation.REVERSED:
                line = line[::-1]
            evids = prim.edges[eid][0]
            e0 = np.asarray(prim.coords[prim.vertex_ids.index(evids[0])], dtype=float)
            e1 = np.asarray(prim.coords[prim.vertex_ids.index(evids[1])], dtype=float)
            k = np.arange(n + 1)[:, None] / n
            pts = e0 + k * (e1 - e0)
            nrm = self._outward(pts[:-1], pts[1:], self.centroid[cells])
            self.border[eid] = (cells, line[:-1], line[1:], nrm, np.hypot(nrm[:, 0], nrm[:, 1]))

    @staticmethod
    def _outward(P, Q, inside):
        d = Q - P
        nrm = np.stack([d[:, 1], -d[:, 0]], axis=1)
        flip = np.einsum("ij,ij->i", nrm, 0.5 * (P + Q) - inside) < 0
        nrm[flip] *= -1.0
        return nrm

    def node_distance(self, cells, length):
        """Centroid-to-edge distance of ``cells`` across an edge of ``length``."""
        return 2.0 * self.area[cells] / (3.0 * length)


def cell_geometry(prim, level) -> CellGeometry:
    key = ("cellgeom", level)
    g = prim.cache.get(key)
    if g is None:
        g = prim.cache[key] = CellGeometry(prim, level)
    return g


def _face_velocity(u: ScalarFunction, prim, level):
    """P1 nodal values on the face's full lattice (flat ``a * (n + 1) + b``)."""
    lay = layout(prim, FunctionKind.P1, level, u.indexing)
    key = ("p1lattice", level, u.indexing)
    idx = prim.cache.get(key)
    if idx is None:
        n = 2**level
        a, b = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        a, b = a.ravel(), b.ravel()
        idx = np.full(len(a), -1, dtype=np.int64)
        ok = a + b <= n
        idx[ok] = lay.frames()[0].lookup(a[ok], b[ok])
        prim.cache[key] = idx
    vals = np.zeros(len(idx))
    ok = idx >= 0
    vals[ok] = u.values(prim, level)[idx[ok]]
    return vals


class TransportProblem:
    """Upwind advection (plus optional two-point diffusion) of a cell field.

    ``boundary`` maps macro-edge mesh flags to prescribed temperatures.  On
    edges without an entry no heat crosses the boundary by diffusion, and
    inflow takes the cell's own value.

    ``form="conservative"`` is the flux form ``-dt/|K| sum F T_upwind``.  It
    conserves ``sum |K| T`` exactly but keeps ``T`` within its initial bounds
    only for discretely divergence-free fluxes.  ``form="advective"`` subtracts
    ``T_K sum F`` and so is bounded for any velocity field, and it conserves
    exactly when the fluxes are divergence-free.
    """

    def __init__(self, T: CellFunction, u: ScalarFunction, v: ScalarFunction,
                 inv_pe: float = 0.0, boundary: dict | None = None, form: str = "conservative"):
        if inv_pe < 0:
            raise ValueError("invPe must be non-negative")
        if form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}, got {form!r}")
        self.form = form
        self.T, self.u, self.v = T, u, v
        self.level = T.level
        self.inv_pe = inv_pe
        self.boundary = dict(boundary or {})
        self.area = CellFunction(T.domain, T.name + ".area", T.level)
        for p in self.area.faces():
            self.area.values(p)[:] = cell_geometry(p, self.level).area
        self.area.sync()
        self._fluxes = None

    def _edge_flag(self, prim, eid):
        return self.T.domain.setup.primitives[eid].flag

    def refresh_velocity(self):
        """Recompute micro-edge fluxes after the velocity changed."""
        lvl = self.level
        self.u.sync(lvl)
        self.v.sync(lvl)
        out = {}
        for p in self.T.faces():
            g = cell_geometry(p, lvl)
            uu, vv = _face_velocity(self.u, p, lvl), _face_velocity(self.v, p, lvl)

            def flux(P, Q, nrm):
                return 0.5 * (uu[P] + uu[Q]) * nrm[:, 0] + 0.5 * (vv[P] + vv[Q]) * nrm[:, 1]

            inner = flux(g.p, g.q, g.normal)
            border = {eid: flux(P, Q, nrm) for eid, (_, P, Q, nrm, _) in g.border.items()}
            out[p.id] = (inner, border)
        self._fluxes = out

    def cfl_limit(self) -> float:
        """Largest stable ``dt``: the advective bound ``0.5 min |K| / |F|`` and,
        per cell, ``|K| / (outflow (conservative) or inflow (advective) flux sum
        + diffusive coefficients)``."""
        if self._fluxes is None:
            self.refresh_velocity()
        parts = []
        for gr in self.T.domain.graphs:
            part = {}
            for p in gr.local(PrimitiveKind.FACE):
                g = cell_geometry(p, self.level)
                inner, border = self._fluxes[p.id]
                ratios = [np.inf]
                out, inn = np.zeros(len(g.area)), np.zeros(len(g.area))
                nz = inner != 0
                ratios.append(np.min(g.area[g.up[nz]] / np.abs(inner[nz]), initial=np.inf))
                ratios.append(np.min(g.area[g.down[nz]] / np.abs(inner[nz]), initial=np.inf))
                np.add.at(out, g.up, np.maximum(inner, 0.0))
                np.add.at(inn, g.up, np.maximum(-inner, 0.0))
                np.add.at(out, g.down, np.maximum(-inner, 0.0))
                np.add.at(inn, g.down, np.maximum(inner, 0.0))
                for eid, (cells, *_rest) in g.border.items():
                    F = border[eid]
                    nz = F != 0
                    ratios.append(np.min(g.area[cells[nz]] / np.abs(F[nz]), initial=np.inf))
                    np.add.at(out, cells, np.maximum(F, 0.0))
                    np.add.at(inn, cells, np.maximum(-F, 0.0))
                coef = (out if self.form == "conservative" else inn) + self._diffusion_coeffs(p, g)
                with np.errstate(divide="ignore"):
                    cell_bound = np.min(np.where(coef > 0, g.area / coef, np.inf))
                part[p.id] = min(0.5 * min(ratios), cell_bound)
            parts.append(part)
        return self.T.domain.controller.reduce_partials(parts, min)

    def _diffusion_coeffs(self, p, g):
        out = np.zeros(len(g.area))
        if self.inv_pe == 0:
            return out
        for cells, w in self._diffusion_links(p, g):
            np.add.at(out, cells, w)
        return out

    def _diffusion_links(self, p, g):
        """Per cell side: transmissibility ``invPe * len / (d_own + d_other)``."""
        ip = self.inv_pe
        t = ip * g.length / (g.node_distance(g.up, g.length) + g.node_distance(g.down, g.length))
        links = [(g.up, t), (g.down, t)]
        for eid, (cells, _, _, _, ln) in g.border.items():
            d_own = g.node_distance(cells, ln)
            if len(self.T.domain.setup.primitives[eid].neighbors[PrimitiveKind.FACE]) == 2:
                d_oth = 2.0 * self.area.ghosts(p, eid) / (3.0 * ln)
                links.append((cells, ip * ln / (d_own + d_oth)))
            elif self._edge_flag(p, eid) in self.boundary:
                links.append((cells, ip * ln / d_own))
        return links

    def step(self, dt: float):
        """Advance ``T`` by one explicit step of size ``dt``."""
        if self._fluxes is None:
            self.refresh_velocity()
        limit = self.cfl_limit()
        if dt > limit:
            raise CFLViolation(dt, limit)
        T, lvl, ip = self.T, self.level, self.inv_pe
        T.sync()
        setup = T.domain.setup
        for p in T.faces():
            g = cell_geometry(p, lvl)
            vals = T.values(p)
            inner, border = self._fluxes[p.id]
            ncell = len(vals)
            Ti, Tj = vals[g.up], vals[g.down]
            idx = [g.up, g.down]
            if self.form == "conservative":
                adv = inner * np.where(inner > 0, Ti, Tj)
                contrib = [-adv, adv]
            else:
                contrib = [np.minimum(inner, 0.0) * (Ti - Tj), np.maximum(inner, 0.0) * (Ti - Tj)]
            if ip > 0:
                t = ip * g.length / (g.node_distance(g.up, g.length) + g.node_distance(g.down, g.length))
                dif = t * (Tj - Ti)
                idx += [g.up, g.down]
                contrib += [dif, -dif]
            for eid, (cells, _, _, _, ln) in g.border.items():
                F = border[eid]
                Tc = vals[cells]
                shared = len(setup.primitives[eid].neighbors[PrimitiveKind.FACE]) == 2
                flag = setup.primitives[eid].flag
                if shared:
                    Tg = T.ghosts(p, eid)
                elif flag in self.boundary:
                    Tg = np.full(len(cells), float(self.boundary[flag]))
                else:
                    Tg = Tc
                idx.append(cells)
                if self.form == "conservative":
                    contrib.append(-F * np.where(F > 0, Tc, Tg))
                else:
                    contrib.append(np.minimum(F, 0.0) * (Tc - Tg))
                if ip > 0 and (shared or flag in self.boundary):
                    d_own = g.node_distance(cells, ln)
                    d = d_own + (2.0 * self.area.ghosts(p, eid) / (3.0 * ln) if shared else 0.0)
                    idx.append(cells)
                    contrib.append(ip * ln / d * (Tg - Tc))
            res = np.bincount(np.concatenate(idx), weights=np.concatenate(contrib), minlength=ncell)
            vals += dt / g.area * res


def transport_step(T: CellFunction, velocity, dt: float, inv_pe: float = 0.0, boundary=None):
    """One upwind step of ``T`` with the P1 velocity pair ``velocity = (u, v)``."""
    problem = TransportProblem(T, velocity[0], velocity[1], inv_pe, boundary)
    problem.step(dt)
    return problem


class AccumulatePackInfo(PackInfo):
    """Adds face lattice partials (sum |K|T, sum |K|) into edge and vertex nodes.

    A macro-face corner is forwarded only through the lower-ID edge at that
    corner so that every face contributes to each vertex exactly once.
    """

    def __init__(self, S: ScalarFunction, W: ScalarFunction, level: int):
        self.S, self.W, self.level = S, W, level

    def _vals(self, fn, prim):
        return fn.values(prim, self.level)

    def _outgoing(self, sender, receiver_id):
        lvl = self.level
        if sender.kind is PrimitiveKind.FACE:
            lay = layout(sender, FunctionKind.P1, lvl, self.S.indexing)
            idx = lay.face_border(receiver_id)
            s_part = self._vals(self.S, sender)[idx].copy()
            w_part = self._vals(self.W, sender)[idx].copy()
            evids = sender.edges[receiver_id][0]
            for end, vid in ((0, evids[0]), (-1, evids[1])):
                at_corner = [e for e in sender.edge_slots if vid in sender.edges[e][0]]
                if receiver_id != min(at_corner):
                    s_part[end] = w_part[end] = 0.0
            return np.concatenate([s_part, w_part])
        # edge -> vertex: the end value
        m = 2**lvl
        pos = 0 if receiver_id == sender.vertex_ids[0] else m
        return np.array([self._vals(self.S, sender)[pos], self._vals(self.W, sender)[pos]])

    def _store(self, receiver, sender_id, data):
        k = len(data) // 2
        if receiver.kind is PrimitiveKind.EDGE:
            sl = slice(0, k)
        else:
            sl = slice(0, 1)
        self._vals(self.S, receiver)[sl] += data[:k]
        self._vals(self.W, receiver)[sl] += data[k:]

    def pack(self, sender, receiver_id, buf):
        buf.put_array(self._outgoing(sender, receiver_id))

    def unpack(self, receiver, sender_id, buf):
        self._store(receiver, sender_id, buf.get_array())

    def local_copy(self, sender, receiver):
        self._store(receiver, sender.id, self._outgoing(sender, receiver.id))


def cell_to_vertex(T: CellFunction, out: ScalarFunction, work=None):
    """``out`` (P1) := area-weighted average of the cells around each node."""
    if out.kind is not FunctionKind.P1:
        raise ValueError("cell_to_vertex needs a P1 target")
    lvl = T.level
    S, W = work if work is not None else (out.similar(out.name + ".S"), out.similar(out.name + ".W"))
    for fn in (S, W):
        for _, p in fn.items():
            fn.values(p, lvl)[:] = 0.0
    n = T.n
    for p in T.faces():
        g = cell_geometry(p, lvl)
        lay = layout(p, FunctionKind.P1, lvl, out.indexing)
        flat = np.repeat(np.arange(len(g.area)), 3)
        nodes = g.nodes.ravel()
        s = np.bincount(nodes, weights=(g.area * T.values(p))[flat], minlength=(n + 1) ** 2)
        w = np.bincount(nodes, weights=g.area[flat], minlength=(n + 1) ** 2)
        a, b = np.divmod(np.arange((n + 1) ** 2), n + 1)
        ok = a + b <= n
        idx = lay.frames()[0].lookup(a[ok], b[ok])
        S.values(p, lvl)[idx] = s[ok]
        W.values(p, lvl)[idx] = w[ok]
    info = AccumulatePackInfo(S, W, lvl)
    ctrl = T.domain.controller
    ctrl.communicate(info, FACE_TO_EDGE, channel=(S.handle_id, "acc"))
    ctrl.communicate(info, EDGE_TO_VERTEX, channel=(S.handle_id, "acc"))
    for _, p in out.items():
        idx = out.layout(p, lvl).owned
        out.values(p, lvl)[idx] = S.values(p, lvl)[idx] / W.values(p, lvl)[idx]
    out.sync(lvl)
    return out
