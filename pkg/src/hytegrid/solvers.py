"""Grid transfer, Krylov methods, geometric multigrid and the Stokes V-cycle."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import functions as fx
from .functions import ALL, FREE, DoFFlag, ScalarFunction
from .indexing import FunctionKind
from .layout import layout
from .mesh import PrimitiveKind
from .operators import (PSPG_DELTA, Form, StencilOperator, assemble_global_sparse,
                        global_numbering)

# refinement-edge neighbours of a lattice point (P1 micro-edges)
_NEIGHBOURS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1))


class LevelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# transfer


def _prolong_plan(prim, level_c):
    """Fine owned storage -> pair of coarse storage indices to average."""
    key = ("prolong", level_c)
    plan = prim.cache.get(key)
    if plan is not None:
        return plan
    kind = FunctionKind.P1
    lc, lf = layout(prim, kind, level_c), layout(prim, kind, level_c + 1)
    table = lc.frames()[0].table
    if prim.kind is PrimitiveKind.FACE:
        idx, a, b = lf.face.interior()
    elif prim.kind is PrimitiveKind.EDGE:
        idx, a = lf.owned, np.arange(1, lf.m)
        b = np.zeros_like(a)
    else:
        idx, a, b = lf.owned, np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64)
    pa, pb = a % 2, b % 2
    # endpoints of the refinement edge through (a, b); even points copy
    a1 = (a - pa) // 2
    b1 = (b + pb * (pa == 1)) // 2
    b1 = np.where((pa == 0) & (pb == 1), (b - 1) // 2, b1)
    a2 = (a + pa) // 2
    b2 = np.where(pa == 1, (b - pb) // 2, (b + pb) // 2)
    plan = prim.cache[key] = (idx, table[a1, b1], table[a2, b2])
    return plan


def _restrict_plan(prim, level_c):
    """Coarse owned storage -> (fine storage, weight) lists, i.e. rows of P^T."""
    key = ("restrict", level_c)
    plan = prim.cache.get(key)
    if plan is not None:
        return plan
    kind = FunctionKind.P1
    lc, lf = layout(prim, kind, level_c), layout(prim, kind, level_c + 1)
    ff = lf.frames()
    mf = lf.m
    if prim.kind is PrimitiveKind.FACE:
        idx, a, b = lc.face.interior()
    elif prim.kind is PrimitiveKind.EDGE:
        idx, a = lc.owned, np.arange(1, lc.m)
        b = np.zeros_like(a)
    else:
        idx, a, b = lc.owned, np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64)
    rows = []
    for ca, cb in zip(a, b):
        fa, fb = 2 * int(ca), 2 * int(cb)
        ent = {int(ff[0].table[fa, fb]): 1.0}
        for fr in ff:
            for da, db in _NEIGHBOURS:
                x, y = fa + da, fb + db
                if x < 0 or y < 0 or x + y > mf:
                    continue
                s = int(fr.table[x, y])
                if s >= 0:
                    ent.setdefault(s, 0.5)
        rows.append(ent)
    width = max((len(r) for r in rows), default=1)
    nbr = np.zeros((len(rows), width), dtype=np.int64)
    w = np.zeros((len(rows), width))
    for i, ent in enumerate(rows):
        keys = sorted(ent)
        nbr[i, :len(keys)] = keys
        w[i, :len(keys)] = [ent[k] for k in keys]
    plan = prim.cache[key] = (idx, nbr, w)
    return plan


def _check_transfer(coarse, level_c, fine, level_f):
    for f in (coarse, fine):
        if f.kind is not FunctionKind.P1:
            raise TypeError("grid transfer is implemented for P1 functions")
    if level_f != level_c + 1:
        raise LevelError(f"levels {level_c} -> {level_f} are not adjacent")
    if not (coarse.min_level <= level_c <= coarse.max_level and fine.min_level <= level_f <= fine.max_level):
        raise LevelError("function does not hold the requested level")


def prolongate(coarse: ScalarFunction, level_c: int, fine: ScalarFunction, mask=ALL, add=False):
    """Linear interpolation onto level ``level_c + 1`` (or add it when ``add``)."""
    _check_transfer(coarse, level_c, fine, level_c + 1)
    coarse.sync(level_c)
    for _, p in fine.items():
        idx, c1, c2 = _prolong_plan(p, level_c)
        xc = coarse.values(p, level_c)
        val = 0.5 * (xc[c1] + xc[c2])
        out = fine.values(p, level_c + 1)
        if mask != ALL:
            sel = (fine.data(p, level_c + 1).flags[idx] & int(mask)) != 0
            idx, val = idx[sel], val[sel]
        if add:
            out[idx] += val
        else:
            out[idx] = val


def restrict(fine: ScalarFunction, level_f: int, coarse: ScalarFunction, mask=ALL):
    """Transpose of :func:`prolongate` (full weighting)."""
    _check_transfer(coarse, level_f - 1, fine, level_f)
    fine.sync(level_f)
    for _, p in coarse.items():
        idx, nbr, w = _restrict_plan(p, level_f - 1)
        val = np.einsum("ij,ij->i", w, fine.values(p, level_f)[nbr])
        out = coarse.values(p, level_f - 1)
        if mask != ALL:
            sel = (coarse.data(p, level_f - 1).flags[idx] & int(mask)) != 0
            idx, val = idx[sel], val[sel]
        out[idx] = val


# ---------------------------------------------------------------------------
# Krylov methods over an abstract vector space


@dataclass
class SolveReport:
    method: str
    iterations: int = 0
    converged: bool = False
    residuals: list = field(default_factory=list)
    breakdown: str | None = None

    def lines(self):
        out = []
        for i, r in enumerate(self.residuals):
            rho = r / self.residuals[i - 1] if i and self.residuals[i - 1] else float("nan")
            out.append(f"iter={i} residual={r:.6e} reduction={rho:.4f}")
        return out


class ArrayOps:
    """Vector-space operations on numpy arrays (assembled systems)."""

    def __init__(self, n):
        self.n = n

    def new(self):
        return np.zeros(self.n)

    def dot(self, x, y):
        return float(np.dot(x, y))

    def axpy(self, alpha, x, y):
        y += alpha * x

    def copy(self, dst, src):
        dst[:] = src

    def scale(self, x, alpha):
        x *= alpha


class BlockVector:
    """Tuple of scalar functions on one level, each with its active mask."""

    def __init__(self, funcs, level, masks=None):
        self.funcs = tuple(funcs)
        self.level = level
        self.masks = tuple(masks) if masks is not None else (FREE,) * len(self.funcs)


class FunctionOps:
    """Vector-space operations on :class:`BlockVector` (distributed dot)."""

    def __init__(self, template: BlockVector):
        self.t = template
        self._pool = []

    def new(self):
        funcs = [f.similar(f"{f.name}~{len(self._pool)}") for f in self.t.funcs]
        v = BlockVector(funcs, self.t.level, self.t.masks)
        self._pool.append(v)
        return v

    def dot(self, x, y):
        return sum(fx.dot(a, b, x.level, m) for a, b, m in zip(x.funcs, y.funcs, x.masks))

    def axpy(self, alpha, x, y):
        for a, b, m in zip(x.funcs, y.funcs, x.masks):
            fx.add_scaled(b, alpha, a, x.level, m)

    def copy(self, dst, src):
        for a, b, m in zip(src.funcs, dst.funcs, src.masks):
            fx.copy(b, a, src.level, m)

    def scale(self, x, alpha):
        for a, m in zip(x.funcs, x.masks):
            fx.assign_many((alpha,), (a,), a, x.level, m)


def cg_solve(apply, b, x, ops, tol=1e-10, max_iter=1000, precond=None) -> SolveReport:
    """(Preconditioned) conjugate gradients for symmetric positive definite ``apply``."""
    rep = SolveReport("cg")
    r, z, p, q = ops.new(), ops.new(), ops.new(), ops.new()
    apply(x, q)
    ops.copy(r, b)
    ops.axpy(-1.0, q, r)
    bnorm = math.sqrt(ops.dot(b, b)) or 1.0
    rn = math.sqrt(ops.dot(r, r))
    rep.residuals.append(rn)
    if rn <= tol * bnorm:
        rep.converged = True
        return rep
    _precondition(precond, r, z, ops)
    ops.copy(p, z)
    rz = ops.dot(r, z)
    for it in range(1, max_iter + 1):
        apply(p, q)
        curv = ops.dot(p, q)
        if curv <= 0.0:
            rep.breakdown = f"non-positive curvature {curv:.3e} at iteration {it}"
            break
        alpha = rz / curv
        ops.axpy(alpha, p, x)
        ops.axpy(-alpha, q, r)
        rn = math.sqrt(ops.dot(r, r))
        rep.residuals.append(rn)
        rep.iterations = it
        if rn <= tol * bnorm:
            rep.converged = True
            break
        _precondition(precond, r, z, ops)
        rz_new = ops.dot(r, z)
        ops.scale(p, rz_new / rz)
        ops.axpy(1.0, z, p)
        rz = rz_new
    return rep


def _precondition(precond, r, z, ops):
    if precond is None:
        ops.copy(z, r)
    else:
        precond(r, z)


def minres_solve(apply, b, x, ops, tol=1e-10, max_iter=1000, precond=None) -> SolveReport:
    """(Preconditioned) MINRES for symmetric, possibly indefinite ``apply``.

    ``precond`` must be symmetric positive definite.  The reported residual
    is the recurrence estimate of ``||b - A x||`` (exact in exact arithmetic
    without preconditioning).
    """
    rep = SolveReport("minres")
    v_old, v, w_old, w_older = ops.new(), ops.new(), ops.new(), ops.new()
    z, z_old, tmp = ops.new(), ops.new(), ops.new()
    apply(x, tmp)
    ops.copy(v, b)
    ops.axpy(-1.0, tmp, v)                     # v = r0
    _precondition(precond, v, z, ops)
    beta = math.sqrt(max(ops.dot(v, z), 0.0))
    bnorm = math.sqrt(ops.dot(b, b)) or 1.0
    rn = math.sqrt(ops.dot(v, v))
    rep.residuals.append(rn)
    if beta == 0.0 or rn <= tol * bnorm:
        rep.converged = True
        return rep
    eta = beta
    c_old = c = 1.0
    s_old = s = 0.0
    beta_old = 0.0
    scale_r = rn / beta                          # residual estimate in the original norm
    for it in range(1, max_iter + 1):
        ops.scale(v, 1.0 / beta)
        ops.scale(z, 1.0 / beta)
        apply(z, tmp)
        alpha = ops.dot(z, tmp)
        ops.axpy(-alpha, v, tmp)
        if it > 1:
            ops.axpy(-beta, v_old, tmp)
        # shift Lanczos vectors
        ops.copy(v_old, v)
        ops.copy(v, tmp)
        ops.copy(z_old, z)
        _precondition(precond, v, z, ops)
        beta_new = math.sqrt(max(ops.dot(v, z), 0.0))
        # QR update
        delta = c * alpha - c_old * s * beta
        rho2 = s * alpha + c_old * c * beta
        rho3 = s_old * beta
        rho1 = math.hypot(delta, beta_new)
        if rho1 == 0.0:
            rep.breakdown = f"Lanczos breakdown at iteration {it}"
            break
        c_old, s_old = c, s
        c, s = delta / rho1, beta_new / rho1
        # w = (z_old - rho3 w_older - rho2 w_old) / rho1
        ops.copy(tmp, z_old)
        ops.axpy(-rho3, w_older, tmp)
        ops.axpy(-rho2, w_old, tmp)
        ops.scale(tmp, 1.0 / rho1)
        ops.copy(w_older, w_old)
        ops.copy(w_old, tmp)
        ops.axpy(c * eta, w_old, x)
        eta = -s * eta
        rep.iterations = it
        rn = abs(eta) * scale_r if precond is None else abs(eta)
        rep.residuals.append(rn)
        if rn <= tol * bnorm:
            rep.converged = True
            break
        if beta_new == 0.0:
            rep.converged = True
            break
        beta_old, beta = beta, beta_new
    return rep


def operator_apply(op: StencilOperator, level, mask=FREE):
    """Matrix-free ``apply`` callable on single-function :class:`BlockVector` s."""

    def apply(src, dst):
        op.apply(src.funcs[0], dst.funcs[0], level, mask)

    return apply


def cg_poisson(op: StencilOperator, rhs: ScalarFunction, x: ScalarFunction, level,
               tol=1e-10, max_iter=1000) -> SolveReport:
    """CG on the free DoFs; Dirichlet values of ``x`` act through the rhs.

    ``cg_solve`` forms ``rhs - A x`` with the full ``x``, so the Dirichlet
    coupling enters the initial residual; search directions stay zero on
    Dirichlet DoFs.
    """
    bv = BlockVector([rhs], level)
    ops = FunctionOps(bv)
    b = ops.new()
    fx.copy(b.funcs[0], rhs, level, FREE)
    xf = BlockVector([x], level)
    return cg_solve(operator_apply(op, level), b, xf, _MaskedZeroOps(ops, x, level), tol, max_iter)


class _MaskedZeroOps(FunctionOps):
    """Work vectors with zero Dirichlet entries so ``A p`` only sees free DoFs."""

    def __init__(self, ops, x, level):
        super().__init__(ops.t)
        self._x, self._level = x, level

    def new(self):
        v = super().new()
        for f in v.funcs:
            fx.set_value(f, 0.0, self._level, ALL)
        return v

    def dot(self, x, y):
        return super().dot(x, y)


# ---------------------------------------------------------------------------
# coarse solves


class CoarseSolver:
    """Direct solve of the assembled operator on the free DoFs of one level.

    Values are gathered on rank 0, solved there and scattered back, so the
    result does not depend on the partition.
    """

    def __init__(self, domain, forms_grid, level, kind=FunctionKind.P1, delta=PSPG_DELTA):
        self.domain, self.level, self.kind = domain, level, kind
        self.numbering = global_numbering(domain.setup, kind, level)
        self.blocks = {}
        for (i, j), form in forms_grid.items():
            if form is not None:
                self.blocks[(i, j)] = assemble_global_sparse(domain.setup, form, kind, level, delta,
                                                             self.numbering)[0]
        self.nblocks = 1 + max(i for i, _ in forms_grid)
        self._rows = None
        self._lu = None

    def _gather(self, funcs, field="values"):
        ctrl = self.domain.controller
        out = []
        for f in funcs:
            parts = [{p.id: getattr(f.data(p, self.level), field)[f.layout(p, self.level).owned]
                      for p in g.local()} for g in self.domain.graphs]
            vals, owners = ctrl.gather_arrays(parts)
            out.append((vals, owners))
        return out

    def _row_map(self, funcs):
        if self._rows is None:
            ctrl = self.domain.controller
            parts = [{p.id: funcs[0].layout(p, self.level).owned_coords.reshape(-1, 2).ravel()
                      for p in g.local()} for g in self.domain.graphs]
            coords, _ = ctrl.gather_arrays(parts)
            self._rows = {pid: self.numbering.rows(c.reshape(-1, 2)) for pid, c in coords.items()}
        return self._rows

    def _to_vec(self, gathered, rows, dtype=float):
        vec = np.zeros(len(self.numbering), dtype=dtype)
        for pid, v in gathered.items():
            vec[rows[pid]] = v
        return vec

    def solve(self, x_funcs, b_funcs, masks, null_block=None, method="direct", tol=1e-12):
        """Solve ``K x = b`` with ``x`` fixed outside ``masks``.

        ``null_block`` names a block whose constant vector spans the null
        space (enclosed-flow pressure); that component is projected out of the
        rhs and the solution.  ``method`` is ``"direct"`` (sparse LU) or
        ``"minres"``.
        """
        rows = self._row_map(x_funcs)
        n = len(self.numbering)
        xs = [self._to_vec(v, rows) for v, _ in self._gather(x_funcs)]
        bs = [self._to_vec(v, rows) for v, _ in self._gather(b_funcs)]
        fl = [self._to_vec(v, rows, np.int64) for v, _ in self._gather(x_funcs, "flags")]
        free = np.concatenate([(f & int(m)) != 0 for f, m in zip(fl, masks)])
        kff, kfd = self._blocks(free)
        xv, bv = np.concatenate(xs), np.concatenate(bs)
        rhs = bv[free] - kfd @ xv[~free]
        null = None
        if null_block is not None:
            null = np.zeros(len(free))
            null[null_block * n:(null_block + 1) * n] = 1.0
            null = null[free] / np.linalg.norm(null[free])
            rhs = rhs - null * (null @ rhs)
        sol = xv.copy()
        if method == "minres":
            y = np.zeros(kff.shape[0])
            rep = minres_solve(lambda a, out: out.__setitem__(slice(None), kff @ a), rhs, y,
                               ArrayOps(len(y)), tol=tol, max_iter=20 * len(y) + 100)
            self.last_report = rep
        elif null is None:
            if self._lu is None:
                self._lu = spla.splu(kff.tocsc())
            y = self._lu.solve(rhs)
        else:
            aug = sp.bmat([[kff, sp.csr_matrix(null[:, None])],
                           [sp.csr_matrix(null[None, :]), None]], format="csc")
            y = spla.spsolve(aug, np.concatenate([rhs, [0.0]]))[:-1]
        if null is not None:
            y = y - null * (null @ y)
        sol[free] = y
        owners = self._gather(x_funcs[:1])[0][1]
        ctrl = self.domain.controller
        for k, f in enumerate(x_funcs):
            seg = sol[k * n:(k + 1) * n]
            back = ctrl.scatter_arrays({pid: seg[r] for pid, r in rows.items()}, owners)
            for g, part in zip(self.domain.graphs, back):
                for pid, v in part.items():
                    p = g.primitives[pid]
                    f.values(p, self.level)[f.layout(p, self.level).owned] = v
        return sol

    def _blocks(self, free):
        if getattr(self, "_cached_free", None) is not None and np.array_equal(self._cached_free, free):
            return self._kff, self._kfd
        n = len(self.numbering)
        big = sp.bmat([[self.blocks.get((i, j), sp.csr_matrix((n, n))) for j in range(self.nblocks)]
                       for i in range(self.nblocks)], format="csr")
        self._cached_free = free.copy()
        self._kff = big[free][:, free]
        self._kfd = big[free][:, ~free]
        self._lu = None
        return self._kff, self._kfd




# ---------------------------------------------------------------------------
# geometric multigrid


@dataclass
class CycleReport:
    residuals: list = field(default_factory=list)

    @property
    def factors(self):
        r = self.residuals
        return [r[i] / r[i - 1] for i in range(1, len(r)) if r[i - 1] > 0]

    def asymptotic_factor(self, first=5, last=10):
        """Mean reduction factor over cycles ``first..last`` (geometric mean)."""
        r = self.residuals
        last = min(last, len(r) - 1)
        if last <= first or r[first - 1] == 0:
            return float("nan")
        return (r[last] / r[first - 1]) ** (1.0 / (last - first + 1))

    def lines(self):
        out = []
        for i, r in enumerate(self.residuals):
            rho = r / self.residuals[i - 1] if i and self.residuals[i - 1] else float("nan")
            out.append(f"cycle={i} residual={r:.6e} reduction={rho:.4f}")
        return out


class GridHierarchy:
    """Re-discretised P1 operators on ``min_level..max_level`` plus work vectors."""

    def __init__(self, domain, min_level: int, max_level: int, bc=None, form=Form.LAPLACE,
                 smoother: str = "gs", omega: float = 0.8):
        if min_level >= max_level:
            raise LevelError("hierarchy needs at least two levels")
        if smoother not in ("gs", "jacobi"):
            raise ValueError(f"unknown smoother {smoother!r}")
        self.domain, self.min_level, self.max_level = domain, min_level, max_level
        self.smoother, self.omega = smoother, omega
        self.op = StencilOperator(domain, form, FunctionKind.P1, min_level, max_level)
        self.bc = bc
        self.r = self.new_function("mg-r")
        self.e = self.new_function("mg-e")
        self.b = self.new_function("mg-b")
        self.coarse = CoarseSolver(domain, {(0, 0): form}, min_level)

    def new_function(self, name) -> ScalarFunction:
        return ScalarFunction(self.domain, name, FunctionKind.P1, self.min_level, self.max_level, self.bc)

    def smooth(self, rhs, x, level):
        if self.smoother == "gs":
            self.op.smooth_gs(rhs, x, level)
        else:
            self.op.smooth_jacobi(rhs, x, level, self.omega)

    def residual_norm(self, x, rhs, level) -> float:
        self.op.residual(x, rhs, self.r, level)
        return fx.norm2(self.r, level, FREE)

    def vcycle(self, x, rhs, level=None, nu1=2, nu2=2):
        level = self.max_level if level is None else level
        if not self.min_level <= level <= self.max_level:
            raise LevelError(f"level {level} outside hierarchy {self.min_level}..{self.max_level}")
        if level == self.min_level:
            self.coarse.solve([x], [rhs], [FREE])
            return
        for _ in range(nu1):
            self.smooth(rhs, x, level)
        self.op.residual(x, rhs, self.r, level)
        restrict(self.r, level, self.b)
        fx.set_value(self.e, 0.0, level - 1)
        self.vcycle(self.e, self.b, level - 1, nu1, nu2)
        prolongate(self.e, level - 1, x, FREE, add=True)
        for _ in range(nu2):
            self.smooth(rhs, x, level)

    def solve(self, x, rhs, cycles=10, nu1=2, nu2=2, tol=0.0) -> CycleReport:
        return CycleReport(self.solve_level(x, rhs, self.max_level, cycles, nu1, nu2, tol))

    def solve_level(self, x, rhs, level, cycles=10, nu1=2, nu2=2, tol=0.0) -> list:
        """V-cycles on ``level``; returns the residual history (initial first)."""
        res = [self.residual_norm(x, rhs, level)]
        for _ in range(cycles):
            self.vcycle(x, rhs, level, nu1, nu2)
            res.append(self.residual_norm(x, rhs, level))
            if res[-1] <= tol * res[0]:
                break
        return res


# ---------------------------------------------------------------------------
# Stokes


def velocity_boundary(neumann_flags=()):
    """Velocity bc: mesh flags in ``neumann_flags`` are natural, others Dirichlet."""
    neumann = set(neumann_flags)

    def bc(flag):
        if flag == 0:
            return DoFFlag.INNER
        return DoFFlag.NEUMANN if flag in neumann else DoFFlag.DIRICHLET

    return bc


def pressure_boundary(flag):
    return DoFFlag.INNER


@dataclass
class StokesState:
    u: ScalarFunction
    v: ScalarFunction
    p: ScalarFunction

    @property
    def funcs(self):
        return (self.u, self.v, self.p)


STOKES_FORMS = {(0, 0): Form.LAPLACE, (1, 1): Form.LAPLACE, (0, 2): Form.GRAD_X,
                (1, 2): Form.GRAD_Y, (2, 0): Form.DIV_X, (2, 1): Form.DIV_Y, (2, 2): Form.PSPG}


class StokesSystem:
    """Equal-order P1-P1 PSPG Stokes blocks ``[A 0 Gx; 0 A Gy; Bx By C]``.

    ``C = -delta h_T^2 (grad p, grad q)`` is negative semi-definite, the
    continuity row reads ``Bx u + By v + C p = g``.
    """

    def __init__(self, domain, min_level, max_level, velocity_bc=None, delta=PSPG_DELTA,
                 omega=0.7, enclosed=False, symmetric=True):
        if min_level >= max_level:
            raise LevelError("hierarchy needs at least two levels")
        self.symmetric = symmetric
        self.domain, self.min_level, self.max_level = domain, min_level, max_level
        self.delta, self.omega, self.enclosed = delta, omega, enclosed
        self.velocity_bc = velocity_bc or velocity_boundary()
        mk = lambda form: StencilOperator(domain, form, FunctionKind.P1, min_level, max_level, delta)
        self.A = mk(Form.LAPLACE)
        self.Bx, self.By = mk(Form.DIV_X), mk(Form.DIV_Y)
        self.Gx, self.Gy = mk(Form.GRAD_X), mk(Form.GRAD_Y)
        self.C = mk(Form.PSPG)
        self.M = mk(Form.MASS)
        self.Lx, self.Ly = mk(Form.PSPG_LOAD_X), mk(Form.PSPG_LOAD_Y)
        self.r = self.new_state("stokes-r")
        self.e = self.new_state("stokes-e")
        self.b = self.new_state("stokes-b")
        self.t1 = self.new_function("stokes-t1", self.velocity_bc)
        self.t2 = self.new_function("stokes-t2", self.velocity_bc)
        self.coarse = CoarseSolver(domain, STOKES_FORMS, min_level, delta=delta)
        self.masks = (FREE, FREE, ALL)

    def new_function(self, name, bc) -> ScalarFunction:
        return ScalarFunction(self.domain, name, FunctionKind.P1, self.min_level, self.max_level, bc)

    def new_state(self, name) -> StokesState:
        return StokesState(self.new_function(name + ".u", self.velocity_bc),
                           self.new_function(name + ".v", self.velocity_bc),
                           self.new_function(name + ".p", pressure_boundary))

    def load(self, fx_func, fy_func, rhs: StokesState, level):
        """Right-hand side of a body force ``(fx, fy)`` given as P1 functions."""
        self.M.apply(fx_func, rhs.u, level, ALL)
        self.M.apply(fy_func, rhs.v, level, ALL)
        self.Lx.apply(fx_func, rhs.p, level, ALL)
        self.Ly.apply(fy_func, self.t1, level, ALL)
        fx.add_scaled(rhs.p, 1.0, self.t1, level, ALL)

    def residual(self, s: StokesState, rhs: StokesState, out: StokesState, level):
        """``out := rhs - K s``; velocity entries outside FREE are zero."""
        for vel, grad, f, o in ((s.u, self.Gx, rhs.u, out.u), (s.v, self.Gy, rhs.v, out.v)):
            self.A.apply(vel, self.t1, level, ALL)
            grad.apply(s.p, self.t2, level, ALL, synced=grad is self.Gy)
            fx.set_value(o, 0.0, level)
            fx.assign_many((1.0, -1.0, -1.0), (f, self.t1, self.t2), o, level, FREE)
        self.Bx.apply(s.u, self.t1, level, ALL, synced=True)
        self.By.apply(s.v, self.t2, level, ALL, synced=True)
        self.C.apply(s.p, out.p, level, ALL, synced=True)
        fx.assign_many((1.0, -1.0, -1.0, -1.0), (rhs.p, self.t1, self.t2, out.p), out.p, level, ALL)

    def residual_norm(self, s, rhs, level) -> float:
        self.residual(s, rhs, self.r, level)
        return math.sqrt(sum(fx.dot(f, f, level, m) for f, m in zip(self.r.funcs, self.masks)))

    def uzawa_smooth(self, s: StokesState, rhs: StokesState, level, omega=None, symmetric=None):
        """GS on each velocity component, then a damped pointwise pressure step."""
        omega = self.omega if omega is None else omega
        symmetric = self.symmetric if symmetric is None else symmetric
        # p is fixed during the velocity sweeps: one sync serves both gradients
        for vel, grad, f in ((s.u, self.Gx, rhs.u), (s.v, self.Gy, rhs.v)):
            grad.apply(s.p, self.t2, level, FREE, synced=grad is self.Gy)
            fx.assign(1.0, f, -1.0, self.t2, self.t2, level, FREE)
            self.A.smooth_gs(self.t2, vel, level)
            if symmetric:
                self.A.smooth_gs(self.t2, vel, level, backward=True)
        if omega == 0.0:
            return
        # r_p = g - B u - C p;  p <- p + omega r_p / diag(C)   (diag(C) < 0)
        self.Bx.apply(s.u, self.t1, level, ALL)
        self.By.apply(s.v, self.t2, level, ALL)
        rp = self.r.p
        self.C.apply(s.p, rp, level, ALL, synced=True)
        fx.assign_many((1.0, -1.0, -1.0, -1.0), (rhs.p, self.t1, self.t2, rp), rp, level, ALL)
        for _, prim in s.p.items():
            d = self.pressure_diagonal(prim, level)
            pts = self.C.plan(prim, level).pts
            s.p.values(prim, level)[pts] += omega * rp.values(prim, level)[pts] / d

    def pressure_diagonal(self, prim, level):
        """Diagonal of ``C`` in plan row order (negative)."""
        try:
            return self.C.nonzero_diagonal(prim, level)
        except ZeroDivisionError:
            raise ZeroDivisionError(f"zero stabilisation diagonal on primitive {prim.id}") from None

    def project_pressure(self, s, level):
        if self.enclosed:
            mean = fx.sum_values(s.p, level) / fx.count_dofs(s.p, level)
            for _, prim in s.p.items():
                s.p.values(prim, level)[s.p.owned(prim, level)] -= mean

    def vcycle(self, s: StokesState, rhs: StokesState, level=None, nu1=3, nu2=3):
        level = self.max_level if level is None else level
        if not self.min_level <= level <= self.max_level:
            raise LevelError(f"level {level} outside hierarchy {self.min_level}..{self.max_level}")
        if level == self.min_level:
            self.coarse.solve(list(s.funcs), list(rhs.funcs), list(self.masks),
                              null_block=2 if self.enclosed else None, method="minres")
            return
        for _ in range(nu1):
            self.uzawa_smooth(s, rhs, level)
        self.residual(s, rhs, self.r, level)
        for rf, bf in zip(self.r.funcs, self.b.funcs):
            restrict(rf, level, bf)
        for ef in self.e.funcs:
            fx.set_value(ef, 0.0, level - 1)
        self.vcycle(self.e, self.b, level - 1, nu1, nu2)
        for ef, sf, m in zip(self.e.funcs, s.funcs, self.masks):
            prolongate(ef, level - 1, sf, m, add=True)
        for _ in range(nu2):
            self.uzawa_smooth(s, rhs, level)

    def solve(self, s, rhs, cycles=10, nu1=3, nu2=3, tol=0.0) -> CycleReport:
        lvl = self.max_level
        rep = CycleReport([self.residual_norm(s, rhs, lvl)])
        for _ in range(cycles):
            self.vcycle(s, rhs, lvl, nu1, nu2)
            self.project_pressure(s, lvl)
            rep.residuals.append(self.residual_norm(s, rhs, lvl))
            if rep.residuals[-1] <= tol * rep.residuals[0]:
                break
        return rep
