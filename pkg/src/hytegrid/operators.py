"""Element matrices, stencil assembly, matrix-free application and smoothers."""
from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp

from .communication import EDGE_TO_FACE, EDGE_TO_VERTEX, FACE_TO_EDGE, SYNC_ORDER, VERTEX_TO_EDGE
from .functions import ALL, FREE, LatticePackInfo, ScalarFunction, _check_kinds
from .indexing import CANONICAL, DoFGroup, FunctionKind
from .layout import layout
from .mesh import PrimitiveKind, signed_area

PSPG_DELTA = 1.0 / 12.0
ORACLE_LEVEL_CAP = 5


class Form(enum.Enum):
    LAPLACE = "laplace"
    MASS = "mass"
    DIV_X = "div_x"
    DIV_Y = "div_y"
    GRAD_X = "grad_x"
    GRAD_Y = "grad_y"
    PSPG = "pspg"
    # right-hand side of the stabilised continuity equation: -delta h^2 (f, grad q)
    PSPG_LOAD_X = "pspg_load_x"
    PSPG_LOAD_Y = "pspg_load_y"


SYMMETRIC_FORMS = frozenset({Form.LAPLACE, Form.MASS, Form.PSPG})

# quadrature on the reference triangle, weights sum to 1 (multiply by area)
_Q4_BARY = np.array([
    [0.108103018168070, 0.445948490915965, 0.445948490915965],
    [0.445948490915965, 0.108103018168070, 0.445948490915965],
    [0.445948490915965, 0.445948490915965, 0.108103018168070],
    [0.816847572980459, 0.091576213509771, 0.091576213509771],
    [0.091576213509771, 0.816847572980459, 0.091576213509771],
    [0.091576213509771, 0.091576213509771, 0.816847572980459],
])
_Q4_W = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)

# P2 node order: three vertices, then midpoints of (1,2), (0,2), (0,1)
P1_UP = ((0, 0), (1, 0), (0, 1))
P1_DOWN = ((1, 0), (1, 1), (0, 1))
P2_UP = ((0, 0), (2, 0), (0, 2), (1, 1), (0, 1), (1, 0))
P2_DOWN = ((2, 0), (2, 2), (0, 2), (1, 2), (1, 1), (2, 1))


def micro_nodes(kind: FunctionKind):
    """Lattice offsets of the (up, down) micro-element nodes."""
    return (P1_UP, P1_DOWN) if kind is FunctionKind.P1 else (P2_UP, P2_DOWN)


def p2_basis(lam: np.ndarray):
    """Values and barycentric derivatives of the six P2 shape functions."""
    l0, l1, l2 = lam
    val = np.array([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                    4 * l1 * l2, 4 * l0 * l2, 4 * l0 * l1])
    z = np.zeros_like(l0)
    dlam = np.array([
        [4 * l0 - 1, z, z],
        [z, 4 * l1 - 1, z],
        [z, z, 4 * l2 - 1],
        [z, 4 * l2, 4 * l1],
        [4 * l2, z, 4 * l0],
        [4 * l1, 4 * l0, z],
    ])
    return val, dlam


def _geometry(vertices):
    v = np.asarray(vertices, dtype=float)
    if v.shape != (3, 2):
        raise ValueError("expected three 2D vertices")
    area = signed_area(*v)
    if area == 0.0:
        raise ValueError("zero-area triangle")
    # gradients of the barycentric coordinates
    grad = np.array([
        [v[1, 1] - v[2, 1], v[2, 0] - v[1, 0]],
        [v[2, 1] - v[0, 1], v[0, 0] - v[2, 0]],
        [v[0, 1] - v[1, 1], v[1, 0] - v[0, 0]],
    ]) / (2.0 * area)
    h = max(np.hypot(*(v[i] - v[j])) for i, j in ((0, 1), (0, 2), (1, 2)))
    return abs(area), grad, h


def local_stiffness(form: Form, vertices, kind: FunctionKind = FunctionKind.P1,
                    delta: float = PSPG_DELTA) -> np.ndarray:
    """Element matrix ``M[test, trial]`` of ``form`` on one triangle."""
    area, grad, h = _geometry(vertices)
    if kind is FunctionKind.P1:
        mat = _p1_local(form, area, grad, h, delta)
    elif kind is FunctionKind.P2:
        mat = _p2_local(form, area, grad, h, delta)
    else:
        raise ValueError(f"no element matrices for {kind}")
    if form in SYMMETRIC_FORMS:
        # quadrature leaves round-off asymmetry; assembled matrices must be exactly symmetric
        mat = 0.5 * (mat + mat.T)
    return mat


def _p1_local(form, area, grad, h, delta):
    if form is Form.LAPLACE:
        return area * grad @ grad.T
    if form is Form.MASS:
        return area / 12.0 * (np.ones((3, 3)) + np.eye(3))
    if form is Form.PSPG:
        return -delta * h * h * area * grad @ grad.T
    # -int psi_i d_c phi_j with constant gradients: int psi_i = area/3
    ones = np.ones(3)
    if form in (Form.DIV_X, Form.DIV_Y):
        c = 0 if form is Form.DIV_X else 1
        return -area / 3.0 * np.outer(ones, grad[:, c])
    if form in (Form.GRAD_X, Form.GRAD_Y):
        c = 0 if form is Form.GRAD_X else 1
        return -area / 3.0 * np.outer(grad[:, c], ones)
    if form in (Form.PSPG_LOAD_X, Form.PSPG_LOAD_Y):
        c = 0 if form is Form.PSPG_LOAD_X else 1
        return -delta * h * h * area / 3.0 * np.outer(grad[:, c], ones)
    raise ValueError(f"unknown form {form}")


def _p2_local(form, area, grad, h, delta):
    out = np.zeros((6, 6))
    for lam, w in zip(_Q4_BARY, _Q4_W):
        val, dlam = p2_basis(lam)
        g = dlam @ grad  # (6, 2) physical gradients
        if form is Form.LAPLACE:
            out += w * g @ g.T
        elif form is Form.MASS:
            out += w * np.outer(val, val)
        elif form is Form.PSPG:
            out -= w * delta * h * h * g @ g.T
        elif form in (Form.DIV_X, Form.DIV_Y):
            out -= w * np.outer(val, g[:, 0 if form is Form.DIV_X else 1])
        elif form in (Form.GRAD_X, Form.GRAD_Y):
            out -= w * np.outer(g[:, 0 if form is Form.GRAD_X else 1], val)
        elif form in (Form.PSPG_LOAD_X, Form.PSPG_LOAD_Y):
            out -= w * delta * h * h * np.outer(g[:, 0 if form is Form.PSPG_LOAD_X else 1], val)
        else:
            raise ValueError(f"unknown form {form}")
    return area * out


# ---------------------------------------------------------------------------
# stencil tables


def dof_group(kind: FunctionKind, a: int, b: int) -> DoFGroup:
    if kind is FunctionKind.P1:
        return DoFGroup.VERTEX
    return {(0, 0): DoFGroup.VERTEX, (1, 0): DoFGroup.EDGE_HORIZONTAL,
            (1, 1): DoFGroup.EDGE_DIAGONAL, (0, 1): DoFGroup.EDGE_VERTICAL}[(a % 2, b % 2)]


_PARITY = {DoFGroup.VERTEX: (0, 0), DoFGroup.EDGE_HORIZONTAL: (1, 0),
           DoFGroup.EDGE_DIAGONAL: (1, 1), DoFGroup.EDGE_VERTICAL: (0, 1)}


@dataclass
class StencilTable:
    """Matrix-row coefficients of one primitive, per receiving DoF group.

    ``entries[group]`` maps ``(frame, da, db)`` to a coefficient, where
    ``frame`` indexes :meth:`PrimitiveLayout.frames` and ``(da, db)`` is the
    neighbour offset in that frame's lattice.
    """

    primitive_id: int
    level: int
    entries: dict

    def offsets(self, group=DoFGroup.VERTEX) -> dict:
        """Single-frame view ``(da, db) -> coefficient`` (faces)."""
        return {(da, db): c for (_, da, db), c in self.entries[group].items()}


def frame_element_matrices(form, kind, frame, delta=PSPG_DELTA):
    s = 1 if kind is FunctionKind.P1 else 2
    up = frame.coords(np.array([0, s, 0]), np.array([0, 0, s]))
    down = frame.coords(np.array([s, s, 0]), np.array([0, s, s]))
    return local_stiffness(form, up, kind, delta), local_stiffness(form, down, kind, delta)


def assemble_stencils(prim, level: int, form: Form, kind: FunctionKind = FunctionKind.P1,
                      delta: float = PSPG_DELTA, fn=CANONICAL) -> StencilTable:
    """Sum element contributions of every micro-triangle around each DoF class."""
    lay = layout(prim, kind, level, fn)
    groups = kind.groups if prim.kind is PrimitiveKind.FACE else (
        (DoFGroup.VERTEX,) if prim.kind is PrimitiveKind.VERTEX or kind is FunctionKind.P1
        else (DoFGroup.VERTEX, DoFGroup.EDGE_HORIZONTAL))
    up_nodes, down_nodes = micro_nodes(kind)
    entries = {}
    for group in groups:
        pa, pb = _PARITY[group]
        acc = defaultdict(float)
        for fi, frame in enumerate(lay.frames()):
            k_up, k_down = frame_element_matrices(form, kind, frame, delta)
            for nodes, mat in ((up_nodes, k_up), (down_nodes, k_down)):
                for j, (oa, ob) in enumerate(nodes):
                    if kind is FunctionKind.P2 and ((oa - pa) % 2 or (ob - pb) % 2):
                        continue
                    if prim.kind is PrimitiveKind.EDGE and ob > 0:
                        continue
                    if prim.kind is PrimitiveKind.VERTEX and (oa > 0 or ob > 0):
                        continue
                    for i, (qa, qb) in enumerate(nodes):
                        acc[(fi, qa - oa, qb - ob)] += mat[j, i]
        entries[group] = dict(acc)
    return StencilTable(prim.id, level, entries)


# ---------------------------------------------------------------------------
# compiled gather plans


@dataclass
class Plan:
    """Rows of one primitive: ``y[pts[i]] = sum_k coef[i, k] * x[nbr[i, k]]``.

    Rows are in lexicographic lattice order, columns unique per row, and
    ``diag[i]`` is the column holding the diagonal coefficient.
    """

    pts: np.ndarray
    nbr: np.ndarray
    coef: np.ndarray
    diag: np.ndarray


def _owned_lattice(prim, lay):
    """Owned storage indices with their lattice coordinates in frame 0."""
    if prim.kind is PrimitiveKind.FACE:
        idx, fc, fr = lay.face.interior()
        order = np.lexsort((fc, fr))
        return idx[order], fc[order], fr[order]
    if prim.kind is PrimitiveKind.EDGE:
        q = np.arange(1, lay.m)
        return lay.owned, q, np.zeros_like(q)
    return lay.owned, np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64)


def compile_plan(prim, table: StencilTable, kind: FunctionKind, level: int, fn=CANONICAL) -> Plan:
    lay = layout(prim, kind, level, fn)
    frames = lay.frames()
    pts, a, b = _owned_lattice(prim, lay)
    if len(pts) == 0:
        z = np.zeros((0, 1))
        return Plan(pts, z.astype(np.int64), z, np.zeros(0, dtype=np.int64))
    groups = np.array([dof_group(kind, x, y) for x, y in zip(a, b)]) if kind is FunctionKind.P2 \
        else np.zeros(len(pts), dtype=int)
    width = max(len(e) for e in table.entries.values())
    nbr = np.repeat(pts[:, None], width, axis=1)
    coef = np.zeros((len(pts), width))
    for g, ent in table.entries.items():
        rows = np.nonzero(groups == int(g))[0]
        if len(rows) == 0:
            continue
        for col, ((fi, da, db), c) in enumerate(sorted(ent.items())):
            t = frames[fi].table
            ia, ib = a[rows] + da, b[rows] + db
            if np.any(ia < 0) or np.any(ib < 0) or np.any(ia + ib > lay.m):
                raise IndexError(f"stencil offset {(da, db)} leaves frame {fi} of primitive {prim.id}")
            idx = t[ia, ib]
            if np.any(idx < 0):
                raise IndexError(f"stencil offset {(da, db)} has no storage on primitive {prim.id}")
            nbr[rows, col] = idx
            coef[rows, col] = c
    if prim.kind is not PrimitiveKind.FACE:
        nbr, coef = _merge_columns(nbr, coef)
    diag = np.argmax(nbr == pts[:, None], axis=1)
    return Plan(pts, np.ascontiguousarray(nbr), np.ascontiguousarray(coef), diag)


def _merge_columns(nbr, coef):
    """Combine columns that reference the same storage index (shared lines)."""
    rows = []
    for r in range(len(nbr)):
        acc = {}
        for j, c in zip(nbr[r], coef[r]):
            acc[int(j)] = acc.get(int(j), 0.0) + c
        rows.append(acc)
    width = max(len(r) for r in rows)
    out_n = np.zeros((len(rows), width), dtype=np.int64)
    out_c = np.zeros((len(rows), width))
    for r, acc in enumerate(rows):
        keys = sorted(acc)
        out_n[r, :len(keys)] = keys
        out_n[r, len(keys):] = keys[0]
        out_c[r, :len(keys)] = [acc[k] for k in keys]
    return out_n, out_c


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _gs_sweep(x, rhs, pts, nbr, coef, diag, active, backward):
    n = pts.shape[0]
    for ii in range(n):
        i = n - 1 - ii if backward else ii
        if not active[i]:
            continue
        p = pts[i]
        s = rhs[p]
        for k in range(nbr.shape[1]):
            if k != diag[i]:
                s -= coef[i, k] * x[nbr[i, k]]
        x[p] = s / coef[i, diag[i]]


def _gather(x, plan: Plan):
    return np.einsum("ij,ij->i", plan.coef, x[plan.nbr])


class StencilOperator:
    """Matrix-free operator ``form`` for ``kind`` functions on a level range.

    Stencils are assembled per primitive at first use and cached on the
    primitive (they are geometry-derived, so they are rebuilt after
    migration instead of being shipped).
    """

    def __init__(self, domain, form: Form, kind: FunctionKind, min_level: int, max_level: int,
                 delta: float = PSPG_DELTA, indexing=CANONICAL):
        self.domain, self.form, self.kind = domain, form, kind
        self.min_level, self.max_level = min_level, max_level
        self.delta, self.indexing = delta, indexing

    def _check_level(self, level):
        if not self.min_level <= level <= self.max_level:
            raise KeyError(f"no stencil for level {level} (operator has {self.min_level}..{self.max_level})")

    def table(self, prim, level) -> StencilTable:
        self._check_level(level)
        key = ("stencil", self.form, self.kind, level, self.delta)
        t = prim.cache.get(key)
        if t is None:
            t = prim.cache[key] = assemble_stencils(prim, level, self.form, self.kind, self.delta)
        return t

    def plan(self, prim, level) -> Plan:
        key = ("plan", self.form, self.kind, level, self.delta, self.indexing)
        p = prim.cache.get(key)
        if p is None:
            p = prim.cache[key] = compile_plan(prim, self.table(prim, level), self.kind, level, self.indexing)
        return p

    def _rows(self, f, prim, level, mask):
        plan = self.plan(prim, level)
        if mask == ALL:
            return plan, None
        flags = f.data(prim, level).flags[plan.pts]
        return plan, (flags & int(mask)) != 0

    def _check(self, *funcs):
        for f in funcs:
            if f.kind is not self.kind:
                raise TypeError(f"operator is {self.kind.value}, function {f.name} is {f.kind.value}")
            if f.indexing is not self.indexing:
                raise TypeError("operator and function use different indexing functions")

    def _compute(self, src, dst, level, mask, kind):
        for _, p in dst.items(kind):
            plan, sel = self._rows(dst, p, level, mask)
            y = _gather(src.values(p, level), plan)
            out = dst.values(p, level)
            if sel is None:
                out[plan.pts] = y
            else:
                out[plan.pts[sel]] = y[sel]

    def apply(self, src: ScalarFunction, dst: ScalarFunction, level: int, mask=ALL, synced=False):
        """``dst := A src`` on owned DoFs of ``dst`` whose flag is in ``mask``.

        Ghosts of ``src`` are refreshed in dependency order; face work overlaps
        the face-to-edge exchange and edge work the edge-to-vertex exchange.
        ``synced=True`` skips the refresh when the caller knows ``src`` has not
        changed since its last complete sync.
        """
        self._check(src, dst)
        if src is dst:
            raise ValueError("apply needs distinct src and dst")
        self._check_level(level)
        if synced:
            for kind in (PrimitiveKind.FACE, PrimitiveKind.EDGE, PrimitiveKind.VERTEX):
                self._compute(src, dst, level, mask, kind)
            return
        ctrl = self.domain.controller
        info = LatticePackInfo(src, level)
        ch = (src.handle_id, "apply")
        ctrl.communicate(info, VERTEX_TO_EDGE, ch)
        ctrl.communicate(info, EDGE_TO_FACE, ch)
        ctrl.start(info, FACE_TO_EDGE, ch)
        self._compute(src, dst, level, mask, PrimitiveKind.FACE)
        ctrl.wait(info, FACE_TO_EDGE, ch)
        ctrl.start(info, EDGE_TO_VERTEX, ch)
        self._compute(src, dst, level, mask, PrimitiveKind.EDGE)
        ctrl.wait(info, EDGE_TO_VERTEX, ch)
        self._compute(src, dst, level, mask, PrimitiveKind.VERTEX)

    def residual(self, x, rhs, r, level, mask=FREE):
        """``r := rhs - A x`` on ``mask``; other owned entries of ``r`` are zeroed."""
        self.apply(x, r, level, ALL)
        for _, p in r.items():
            lay = r.layout(p, level)
            out = r.values(p, level)
            fl = r.data(p, level).flags[lay.owned]
            sel = (fl & int(mask)) != 0
            own = lay.owned
            out[own] = np.where(sel, rhs.values(p, level)[own] - out[own], 0.0)

    def diagonal(self, prim, level) -> np.ndarray:
        plan = self.plan(prim, level)
        return plan.coef[np.arange(len(plan.pts)), plan.diag]

    def nonzero_diagonal(self, prim, level) -> np.ndarray:
        """:meth:`diagonal`, checked once per plan; raises on a zero entry."""
        plan = self.plan(prim, level)
        hit = prim.cache.get(("checked-diag", id(self), level))
        if hit is not None and hit[0] is plan:
            return hit[1]
        d = self.diagonal(prim, level)
        if np.any(d == 0):
            raise ZeroDivisionError(f"zero diagonal on primitive {prim.id}")
        prim.cache[("checked-diag", id(self), level)] = (plan, d)
        return d

    def smooth_jacobi(self, rhs, x, level, omega=1.0, mask=FREE):
        """``x <- x + omega D^-1 (rhs - A x)`` on ``mask`` DoFs."""
        self._check(rhs, x)
        x.sync(level)
        updates = []
        for _, p in x.items():
            plan, sel = self._rows(x, p, level, mask)
            d = self.nonzero_diagonal(p, level)
            xv = x.values(p, level)
            r = rhs.values(p, level)[plan.pts] - _gather(xv, plan)
            upd = xv[plan.pts] + omega * r / d
            updates.append((xv, plan.pts if sel is None else plan.pts[sel],
                            upd if sel is None else upd[sel]))
        for xv, idx, val in updates:
            xv[idx] = val

    def smooth_gs(self, rhs, x, level, mask=FREE, backward=False):
        """Hybrid Gauss-Seidel: lexicographic inside each primitive, halos frozen.

        Ghosts are refreshed before each of the vertex, edge and face phases
        (reverse phase and row order when ``backward``).  Only the first
        refresh is a full sync; later ones forward just what the previous
        phase changed.
        """
        self._check(rhs, x)
        if backward:
            schedule = ((PrimitiveKind.FACE, None), (PrimitiveKind.EDGE, FACE_TO_EDGE),
                        (PrimitiveKind.VERTEX, EDGE_TO_VERTEX))
        else:
            schedule = ((PrimitiveKind.VERTEX, None), (PrimitiveKind.EDGE, VERTEX_TO_EDGE),
                        (PrimitiveKind.FACE, EDGE_TO_FACE))
        for kind, direction in schedule:
            x.sync(level, directions=(direction,) if direction else SYNC_ORDER)
            for _, p in x.items(kind):
                plan, sel = self._rows(x, p, level, mask)
                if len(plan.pts) == 0:
                    continue
                self.nonzero_diagonal(p, level)
                active = np.ones(len(plan.pts), dtype=np.bool_) if sel is None else sel
                _gs_sweep(x.values(p, level), rhs.values(p, level), plan.pts, plan.nbr,
                          plan.coef, plan.diag, active, backward)


def zero_operator_check(op: StencilOperator, level) -> bool:
    return all(not np.any(op.plan(p, level).coef) for _, p in op.domain.local_items())


# ---------------------------------------------------------------------------
# assembled oracle


@dataclass
class GlobalNumbering:
    """Partition-independent global DoF numbering keyed by point coordinates."""

    coords: np.ndarray
    index: dict

    @staticmethod
    def key(x, y):
        return (round(float(x) * 1e9), round(float(y) * 1e9))

    def rows(self, xy) -> np.ndarray:
        return np.array([self.index[self.key(x, y)] for x, y in np.atleast_2d(xy)], dtype=np.int64)

    def __len__(self):
        return len(self.coords)


def _face_lattice_coords(corners, m, a, b):
    c0, c1, c2 = (np.asarray(c, dtype=float) for c in corners)
    return c0 + np.outer(a / m, c1 - c0) + np.outer(b / m, c2 - c0)


def global_numbering(setup, kind: FunctionKind, level: int) -> GlobalNumbering:
    """Number every lattice point of the refined mesh once, faces in ID order."""
    m = kind.resolution(level)
    a, b = np.array([(i, j) for j in range(m + 1) for i in range(m + 1 - j)]).T
    index, coords = {}, []
    for f in setup.of_kind(PrimitiveKind.FACE):
        for x, y in _face_lattice_coords(f.coords, m, a, b):
            k = GlobalNumbering.key(x, y)
            if k not in index:
                index[k] = len(coords)
                coords.append((x, y))
    return GlobalNumbering(np.array(coords), index)


def assemble_global_sparse(setup, form: Form, kind: FunctionKind, level: int,
                           delta: float = PSPG_DELTA, numbering: GlobalNumbering | None = None,
                           level_cap: int = ORACLE_LEVEL_CAP):
    """Direct finite-element assembly over all micro-triangles.

    Independent of the stencil machinery: only :func:`local_stiffness` is
    shared.  Returns ``(csr_matrix, numbering)``.
    """
    if level > level_cap:
        raise ValueError(f"level {level} above oracle cap {level_cap}")
    numbering = numbering or global_numbering(setup, kind, level)
    m = kind.resolution(level)
    s = 1 if kind is FunctionKind.P1 else 2
    up, down = micro_nodes(kind)
    rows, cols, vals = [], [], []
    for f in setup.of_kind(PrimitiveKind.FACE):
        for ob in range(0, m, s):
            for oa in range(0, m - ob, s):
                for nodes, verts, fits in ((up, ((0, 0), (s, 0), (0, s)), oa + ob + s <= m),
                                           (down, ((s, 0), (s, s), (0, s)), oa + ob + 2 * s <= m)):
                    if not fits:
                        continue
                    va = np.array([oa + v[0] for v in verts])
                    vb = np.array([ob + v[1] for v in verts])
                    mat = local_stiffness(form, _face_lattice_coords(f.coords, m, va, vb), kind, delta)
                    na = np.array([oa + n[0] for n in nodes])
                    nb = np.array([ob + n[1] for n in nodes])
                    dofs = numbering.rows(_face_lattice_coords(f.coords, m, na, nb))
                    rows.append(np.repeat(dofs, len(dofs)))
                    cols.append(np.tile(dofs, len(dofs)))
                    vals.append(mat.ravel())
    n = len(numbering)
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n)).tocsr()
    mat.sum_duplicates()
    return mat, numbering


def to_global(f: ScalarFunction, level: int, numbering: GlobalNumbering, field="values") -> np.ndarray:
    """Owned DoFs of ``f`` scattered into the oracle numbering."""
    out = np.zeros(len(numbering), dtype=float if field == "values" else np.int64)
    for _, p in f.items():
        lay = f.layout(p, level)
        rows = _rows_of(p, lay, numbering, f.kind, level)
        out[rows] = getattr(f.data(p, level), field)[lay.owned]
    return out


def from_global(vec: np.ndarray, f: ScalarFunction, level: int, numbering: GlobalNumbering, mask=ALL):
    for _, p in f.items():
        lay = f.layout(p, level)
        rows = _rows_of(p, lay, numbering, f.kind, level)
        own = f.data(p, level)
        sel = (own.flags[lay.owned] & int(mask)) != 0
        own.values[lay.owned[sel]] = vec[rows[sel]]


def _rows_of(prim, lay, numbering, kind, level):
    key = ("rows", kind, level, id(numbering))
    rows = prim.cache.get(key)
    if rows is None:
        rows = prim.cache[key] = numbering.rows(lay.owned_coords)
    return rows


def write_coo(matrix, path):
    """Export as ``row col value`` text lines."""
    coo = matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {float(v)!r}\n")


def read_coo(path, shape=None):
    data = np.loadtxt(path, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix(shape or (0, 0))
    r, c, v = data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2]
    n = shape or (int(r.max()) + 1, int(c.max()) + 1)
    return sp.coo_matrix((v, (r, c)), shape=n).tocsr()


# 7-point degree-5 rule on the reference triangle (weights sum to one)
_Q5_A, _Q5_B = 0.059715871789770, 0.470142064105115
_Q5_C, _Q5_D = 0.797426985353087, 0.101286507323456
_Q5_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_Q5_A, _Q5_B, _Q5_B], [_Q5_B, _Q5_A, _Q5_B], [_Q5_B, _Q5_B, _Q5_A],
    [_Q5_C, _Q5_D, _Q5_D], [_Q5_D, _Q5_C, _Q5_D], [_Q5_D, _Q5_D, _Q5_C],
])
_Q5_W = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


def _element_table(kind: FunctionKind, level: int):
    """Lattice nodes of all micro-elements of a face, ``(E, k, 2)``."""
    n = 2**level
    s = 1 if kind is FunctionKind.P1 else 2
    up, down = micro_nodes(kind)
    base_up = np.array([(c, r) for r in range(n) for c in range(n - r)])
    base_dn = np.array([(c, r) for r in range(n - 1) for c in range(n - 1 - r)]).reshape(-1, 2)
    els = [s * base_up[:, None, :] + np.array(up)[None]]
    if len(base_dn):
        els.append(s * base_dn[:, None, :] + np.array(down)[None])
    return np.concatenate(els)


def l2_error(f: ScalarFunction, exact, level: int) -> float:
    """``||f - exact||_L2`` with a degree-5 rule on every micro-triangle."""
    f.sync(level)
    if f.kind is FunctionKind.P1:
        shape = _Q5_BARY.T
    else:
        shape = p2_basis(_Q5_BARY.T)[0]                   # (6, Q)
    els = _element_table(f.kind, level)
    parts = []
    for g in f.domain.graphs:
        part = {}
        for p in g.local(PrimitiveKind.FACE):
            lay = layout(p, f.kind, level, f.indexing)
            fr = lay.frames()[0]
            vals = f.values(p, level)[fr.lookup(els[..., 0], els[..., 1])]      # (E, k)
            corners = fr.coords(els[:, :3, 0], els[:, :3, 1])                    # (E, 3, 2)
            xq = np.einsum("qi,eid->eqd", _Q5_BARY, corners)
            uh = vals @ shape
            d1, d2 = corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]
            area = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
            err = uh - np.asarray(exact(xq[..., 0], xq[..., 1]), dtype=float)
            part[p.id] = float(np.dot(area, (err**2) @ _Q5_W))
        parts.append(part)
    return float(np.sqrt(f.domain.controller.reduce_partials(parts)))
