"""Example applications: manufactured Poisson, Stokes channel, annulus convection, partitions."""
from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import functions as fx
from .. import mesh as meshmod
from ..balancing import (
    edge_cut,
    face_cut,
    partition_greedy_edgecut,
    partition_round_robin,
    rank_loads,
    weighted_graph,
)
from ..functions import ALL, FREE, ScalarFunction
from ..indexing import FunctionKind
from ..operators import Form, StencilOperator, l2_error
from ..primitives import Domain
from ..solvers import GridHierarchy, StokesSystem, cg_poisson, velocity_boundary
from .transport import CellFunction, TransportProblem, cell_to_vertex
from .vtk import write_partition, write_vtk

PARTITIONERS = ("rr", "greedy")
INITIAL_STATES = ("layer", "conductive", "cold")
MAX_LEVEL = 8


class ConfigError(ValueError):
    """Invalid run configuration (the CLI maps it to exit code 2)."""


def load_mesh(name: str | None, default: str) -> meshmod.UnstructuredMesh:
    """A mesh file path or a fixture name (``square``, ``channel``, ...)."""
    name = name or default
    if Path(name).is_file():
        return meshmod.read_mesh(name)
    if name in meshmod.FIXTURES:
        return meshmod.FIXTURES[name]()
    raise ConfigError(f"mesh {name!r} is neither a file nor a fixture ({', '.join(meshmod.FIXTURES)})")


def make_domain(setup, ranks: int, partitioner: str, level: int | None = None) -> Domain:
    if partitioner == "rr":
        assignment = partition_round_robin(setup, ranks)
    else:
        assignment, _ = partition_greedy_edgecut(weighted_graph(setup, level), ranks)
    return Domain(setup, assignment, ranks)


@dataclass
class RunConfig:
    mesh: str | None = None
    level: int = 4
    ranks: int = 1
    partitioner: str = "rr"
    cycles: int = 10
    vtk_out: str | None = None

    def validate(self):
        if not 1 <= self.level <= MAX_LEVEL:
            raise ConfigError(f"level must be in 1..{MAX_LEVEL}, got {self.level}")
        if self.ranks < 1:
            raise ConfigError(f"ranks must be >= 1, got {self.ranks}")
        if self.partitioner not in PARTITIONERS:
            raise ConfigError(f"partitioner must be one of {PARTITIONERS}, got {self.partitioner!r}")
        if self.cycles < 0:
            raise ConfigError(f"cycles must be >= 0, got {self.cycles}")
        return self

    def header(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Poisson


MANUFACTURED = {
    "sine": (lambda x, y: np.sin(math.pi * x) * np.sin(math.pi * y),
             lambda x, y: 2 * math.pi**2 * np.sin(math.pi * x) * np.sin(math.pi * y)),
    "zero": (lambda x, y: 0.0 * x, lambda x, y: 0.0 * x),
}


@dataclass
class PoissonConfig(RunConfig):
    mesh: str | None = "square"
    level: int = 5
    kind: str = "P1"
    coarse_level: int = 1
    study_levels: int = 3          # error is reported on the last this-many levels
    solution: str = "sine"
    tol: float = 1e-11

    def validate(self):
        super().validate()
        if self.kind not in ("P1", "P2"):
            raise ConfigError(f"kind must be P1 or P2, got {self.kind!r}")
        if not 0 <= self.coarse_level < self.level:
            raise ConfigError("coarse level must be below the run level")
        if self.solution not in MANUFACTURED:
            raise ConfigError(f"unknown manufactured solution {self.solution!r}")
        if self.study_levels < 1:
            raise ConfigError("study_levels must be >= 1")
        return self


@dataclass
class PoissonReport:
    levels: list
    errors: list
    residuals: dict                 # level -> residual history
    dofs: dict
    max_abs: float = 0.0
    files: list = field(default_factory=list)

    @property
    def ratios(self):
        return [a / b for a, b in zip(self.errors, self.errors[1:]) if b > 0]

    def lines(self):
        out = []
        for lvl, e in zip(self.levels, self.errors):
            res = self.residuals[lvl]
            out.append(f"level={lvl} dofs={self.dofs[lvl]} l2_error={e:.6e} "
                       f"iterations={len(res) - 1} residual={res[-1]:.3e}")
        out += [f"ratio={r:.4f}" for r in self.ratios]
        return out


def run_poisson(cfg: PoissonConfig) -> PoissonReport:
    cfg.validate()
    setup = meshmod.build_setup_graph(load_mesh(cfg.mesh, "square"))
    domain = make_domain(setup, cfg.ranks, cfg.partitioner, cfg.level)
    exact, rhs_fn = MANUFACTURED[cfg.solution]
    kind = FunctionKind(cfg.kind)
    lo = max(cfg.coarse_level + 1, cfg.level - cfg.study_levels + 1)
    levels = list(range(lo, cfg.level + 1))
    mass = StencilOperator(domain, Form.MASS, kind, cfg.coarse_level, cfg.level)
    if kind is FunctionKind.P1:
        hier = GridHierarchy(domain, cfg.coarse_level, cfg.level)
        x, f, rhs = (hier.new_function(n) for n in ("u", "f", "rhs"))
    else:
        op = StencilOperator(domain, Form.LAPLACE, kind, cfg.coarse_level, cfg.level)
        x, f, rhs = (ScalarFunction(domain, n, kind, cfg.coarse_level, cfg.level) for n in ("u", "f", "rhs"))
    report = PoissonReport(levels, [], {}, {})
    for lvl in levels:
        f.interpolate(rhs_fn, lvl)
        mass.apply(f, rhs, lvl, ALL)
        fx.set_value(x, 0.0, lvl)
        x.interpolate(exact, lvl, fx.DoFFlag.DIRICHLET)
        if kind is FunctionKind.P1:
            hist = hier.solve_level(x, rhs, lvl, cfg.cycles, tol=cfg.tol)
        else:
            hist = cg_poisson(op, rhs, x, lvl, tol=cfg.tol, max_iter=max(cfg.cycles, 1) * 100).residuals
        report.residuals[lvl] = list(hist)
        report.errors.append(l2_error(x, exact, lvl))
        report.dofs[lvl] = fx.count_dofs(x, lvl, FREE)
    report.max_abs = fx.max_abs(x, cfg.level)
    if cfg.vtk_out:
        report.files.append(str(write_vtk([x], cfg.level, Path(cfg.vtk_out) / "poisson.vtk")))
    return report


# ---------------------------------------------------------------------------
# Stokes channel


@dataclass
class StokesConfig(RunConfig):
    mesh: str | None = "channel"
    level: int = 4
    coarse_level: int = 1
    inflow: float = 1.0            # peak of the parabolic inflow profile
    nu: int = 3
    omega: float = 0.7

    def validate(self):
        super().validate()
        if not 0 <= self.coarse_level < self.level:
            raise ConfigError("coarse level must be below the run level")
        if self.nu < 1:
            raise ConfigError("nu must be >= 1")
        if not 0 < self.omega <= 2:
            raise ConfigError("omega must be in (0, 2]")
        return self


@dataclass
class StokesReport:
    residuals: list
    relative_residual: float
    profile_error: float
    divergence: float
    centerline: list
    length: float
    files: list = field(default_factory=list)

    def lines(self):
        out = [f"cycle={i} residual={r:.6e}" for i, r in enumerate(self.residuals)]
        out += [f"relative_residual={self.relative_residual:.3e}",
                f"profile_rel_l2={self.profile_error:.4e}",
                f"divergence={self.divergence:.3e}"]
        out += [f"centerline y={y:.4f} u={u:.6f}" for y, u in self.centerline]
        return out


def _owned_samples(f: ScalarFunction, level):
    xy, vals = [], []
    for _, p in f.items():
        lay = f.layout(p, level)
        xy.append(np.atleast_2d(lay.owned_coords))
        vals.append(f.values(p, level)[lay.owned])
    return np.concatenate(xy), np.concatenate(vals)


def run_stokes_channel(cfg: StokesConfig) -> StokesReport:
    cfg.validate()
    setup = meshmod.build_setup_graph(load_mesh(cfg.mesh, "channel"))
    domain = make_domain(setup, cfg.ranks, cfg.partitioner, cfg.level)
    xs = [c[0] for p in setup.primitives.values() for c in p.coords]
    ys = [c[1] for p in setup.primitives.values() for c in p.coords]
    x0, length = min(xs), max(xs) - min(xs)
    y0, height = min(ys), max(ys) - min(ys)
    amp = cfg.inflow

    def profile(x, y):
        eta = (y - y0) / height
        return amp * 4.0 * eta * (1.0 - eta) + 0.0 * x

    S = StokesSystem(domain, cfg.coarse_level, cfg.level, velocity_boundary([meshmod.CHANNEL_OUTFLOW]),
                     omega=cfg.omega)
    lvl = cfg.level
    s, rhs = S.new_state("x"), S.new_state("f")
    inflow = lambda x, y: np.where(np.abs(x - x0) < 1e-12, profile(x, y), 0.0)
    s.u.interpolate(inflow, lvl, fx.DoFFlag.DIRICHLET)
    rep = S.solve(s, rhs, cycles=cfg.cycles, nu1=cfg.nu, nu2=cfg.nu)
    rel = rep.residuals[-1] / rep.residuals[0] if rep.residuals[0] > 0 else 0.0

    norm_exact = l2_error(S.e.u, profile, lvl) if amp else 0.0   # S.e.u is zero on the fine level
    err = l2_error(s.u, profile, lvl)
    profile_error = err / norm_exact if norm_exact > 0 else err

    S.residual(s, rhs, S.r, lvl)
    unorm = math.sqrt(fx.dot(s.u, s.u, lvl) + fx.dot(s.v, s.v, lvl))
    div = fx.norm2(S.r.p, lvl)
    divergence = div / unorm if unorm > 0 else div

    xy, vals = _owned_samples(s.u, lvl)
    mid = x0 + 0.5 * length
    sel = np.abs(xy[:, 0] - mid) < 1e-9
    centerline = sorted(zip(xy[sel, 1].tolist(), vals[sel].tolist()))
    report = StokesReport(rep.residuals, rel, profile_error, divergence, centerline, length)
    if cfg.vtk_out:
        report.files.append(str(write_vtk(list(s.funcs), lvl, Path(cfg.vtk_out) / "stokes.vtk")))
    return report


# ---------------------------------------------------------------------------
# Annulus convection


@dataclass
class AnnulusConfig(RunConfig):
    mesh: str | None = None        # default: structured annulus with ``faces`` macro-faces
    level: int = 4
    Ra: float = 1e4
    invPe: float = 0.0
    stokesEvery: int = 3
    steps: int = 300
    faces: int = 32
    r_in: float = 1.0
    r_out: float = 2.0
    coarse_level: int = 1
    stokes_cycles: int = 2
    cfl: float = 0.9               # fraction of the stable step actually taken
    dt_max: float = 1e-3
    buoyancy: float = 1.0          # +1: force +Ra T r_hat (hot fluid rises outward)
    # "layer": hot film on the inner wall; "conductive": log profile; "cold": T = 0
    initial: str = "layer"
    layer: float = 0.15            # film thickness as a fraction of the gap
    perturbation: float = 0.2
    modes: int = 4
    snapshot_every: int = 0

    def validate(self):
        super().validate()
        if self.stokesEvery < 1:
            raise ConfigError("stokesEvery must be >= 1")
        if self.invPe < 0:
            raise ConfigError("invPe must be >= 0")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if not 0 < self.cfl <= 1:
            raise ConfigError("cfl fraction must be in (0, 1]")
        if not 0 < self.r_in < self.r_out:
            raise ConfigError("need 0 < r_in < r_out")
        if not 0 <= self.coarse_level < self.level:
            raise ConfigError("coarse level must be below the run level")
        if self.initial not in INITIAL_STATES:
            raise ConfigError(f"initial must be one of {INITIAL_STATES}")
        if self.mesh is None and (self.faces < 8 or self.faces % 2):
            raise ConfigError("annulus face count must be even and >= 8")
        return self


@dataclass
class AnnulusSample:
    step: int
    time: float
    kinetic: float
    t_min: float
    t_max: float
    mass: float
    vr_max: float


@dataclass
class AnnulusReport:
    samples: list
    digest: str                    # sha256 of the final temperature bytes
    files: list = field(default_factory=list)

    def lines(self):
        return [f"step={s.step} time={s.time:.6e} kinetic={s.kinetic:.6e} T_min={s.t_min:.6f} "
                f"T_max={s.t_max:.6f} mass={s.mass:.12e} vr_max={s.vr_max:.6e}" for s in self.samples] \
            + [f"digest={self.digest}"]


class AnnulusRun:
    """State of the coupled Stokes/transport annulus model; advanced by :meth:`step`."""

    def __init__(self, cfg: AnnulusConfig):
        self.cfg = cfg.validate()
        if cfg.mesh is None:
            m = meshmod.annulus_faces(cfg.faces, cfg.r_in, cfg.r_out)
        else:
            m = load_mesh(cfg.mesh, "annulus")
        self.setup = meshmod.build_setup_graph(m)
        self.domain = make_domain(self.setup, cfg.ranks, cfg.partitioner, cfg.level)
        L = self.level = cfg.level
        self.S = StokesSystem(self.domain, cfg.coarse_level, L, enclosed=True)
        self.state, self.rhs = self.S.new_state("vel"), self.S.new_state("load")
        self.T = CellFunction(self.domain, "T", L)
        self.T_nodal = self.S.new_function("T_nodal", None)
        self.force = (self.S.new_function("fx", None), self.S.new_function("fy", None))
        self.work = (self.T_nodal.similar("acc.S"), self.T_nodal.similar("acc.W"))
        self.transport = TransportProblem(self.T, self.state.u, self.state.v, cfg.invPe,
                                          {meshmod.ANNULUS_INNER: 1.0, meshmod.ANNULUS_OUTER: 0.0},
                                          form="advective")
        ri, ro, eps, k = cfg.r_in, cfg.r_out, cfg.perturbation, cfg.modes
        gap = ro - ri

        def initial(x, y):
            r, th = np.hypot(x, y), np.arctan2(y, x)
            if cfg.initial == "cold":
                return 0.0 * r
            if cfg.initial == "conductive":
                base = np.log(r / ro) / np.log(ri / ro)
                bump = eps * np.cos(k * th) * np.sin(math.pi * (r - ri) / gap)
                return np.clip(base + bump, 0.0, 1.0)
            edge = ri + cfg.layer * gap * (1.0 + eps * np.cos(k * th))
            return 0.5 * (1.0 - np.tanh((r - edge) / (0.02 * gap)))

        self.T.interpolate(initial)
        self.steps_done, self.time = 0, 0.0
        self.stokes_solve(cfg.cycles)

    def stokes_solve(self, cycles=None):
        cfg, L = self.cfg, self.level
        cell_to_vertex(self.T, self.T_nodal, self.work)
        scale = cfg.buoyancy * cfg.Ra
        for comp, f in enumerate(self.force):
            for _, p in f.items():
                lay = f.layout(p, L)
                xy = np.atleast_2d(lay.owned_coords)
                r = np.hypot(xy[:, 0], xy[:, 1])
                f.values(p, L)[lay.owned] = scale * self.T_nodal.values(p, L)[lay.owned] * xy[:, comp] / r
        self.S.load(*self.force, self.rhs, L)
        for _ in range(cfg.stokes_cycles if cycles is None else cycles):
            self.S.vcycle(self.state, self.rhs, L)
            self.S.project_pressure(self.state, L)
        self.transport.refresh_velocity()

    def step(self):
        if self.steps_done > 0 and self.steps_done % self.cfg.stokesEvery == 0:
            self.stokes_solve()
        dt = min(self.cfg.dt_max, self.cfg.cfl * self.transport.cfl_limit())
        self.transport.step(dt)
        self.steps_done += 1
        self.time += dt

    def kinetic_energy(self) -> float:
        L = self.level
        e = 0.0
        for vel in (self.state.u, self.state.v):
            self.S.M.apply(vel, self.S.t1, L, ALL)
            e += fx.dot(vel, self.S.t1, L)
        return 0.5 * e

    def max_radial_velocity(self) -> float:
        xy, u = _owned_samples(self.state.u, self.level)
        _, v = _owned_samples(self.state.v, self.level)
        r = np.hypot(xy[:, 0], xy[:, 1])
        return float(np.max((u * xy[:, 0] + v * xy[:, 1]) / r, initial=0.0))

    def sample(self) -> AnnulusSample:
        T = self.T
        return AnnulusSample(self.steps_done, self.time, self.kinetic_energy(), T.min(), T.max(),
                             T.integral(), self.max_radial_velocity())

    def digest(self) -> str:
        return hashlib.sha256(self.T.state_bytes()).hexdigest()

    def snapshot(self, directory) -> str:
        path = Path(directory) / f"annulus_{self.steps_done:06d}.vtk"
        return str(write_vtk([self.T_nodal, *self.state.funcs, self.T], self.level, path))


def run_annulus(cfg: AnnulusConfig, sample_at=(10,)) -> AnnulusReport:
    run = AnnulusRun(cfg)
    samples, files = [run.sample()], []
    wanted = set(sample_at)
    for _ in range(cfg.steps):
        run.step()
        k = run.steps_done
        if k in wanted or k == cfg.steps:
            samples.append(run.sample())
        if cfg.vtk_out and cfg.snapshot_every and k % cfg.snapshot_every == 0:
            files.append(run.snapshot(cfg.vtk_out))
    if cfg.vtk_out and (not cfg.snapshot_every or run.steps_done % cfg.snapshot_every):
        cell_to_vertex(run.T, run.T_nodal, run.work)
        files.append(run.snapshot(cfg.vtk_out))
    return AnnulusReport(samples, run.digest(), files)


# ---------------------------------------------------------------------------
# Partition


@dataclass
class PartitionConfig(RunConfig):
    mesh: str | None = "ring"
    level: int = 2


@dataclass
class PartitionSummary:
    assignment: dict
    loads: list
    edge_cut: int
    face_cut: int
    feasible: bool
    notes: list
    files: list = field(default_factory=list)

    def lines(self):
        out = [f"rank={r} load={w:g}" for r, w in enumerate(self.loads)]
        out += [f"edge_cut={self.edge_cut}", f"face_cut={self.face_cut}", f"feasible={self.feasible}"]
        out += [f"note={n}" for n in self.notes]
        out += [f"primitive={pid} rank={r}" for pid, r in sorted(self.assignment.items())]
        return out


def run_partition(cfg: PartitionConfig) -> PartitionSummary:
    cfg.validate()
    setup = meshmod.build_setup_graph(load_mesh(cfg.mesh, "ring"))
    wg = weighted_graph(setup, cfg.level)
    feasible, notes = True, []
    if cfg.partitioner == "rr":
        assignment = partition_round_robin(setup, cfg.ranks)
    else:
        assignment, rep = partition_greedy_edgecut(wg, cfg.ranks)
        feasible, notes = rep.feasible, rep.notes
    out = PartitionSummary(assignment, rank_loads(wg, assignment, cfg.ranks), edge_cut(wg, assignment),
                           face_cut(wg, assignment), feasible, notes)
    if cfg.vtk_out:
        out.files.append(str(write_partition(setup, assignment, Path(cfg.vtk_out) / "partition.vtk")))
    return out
