"""Legacy ASCII VTK output (unstructured grid of micro-triangles) and a reader/validator."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..functions import ScalarFunction
from ..indexing import FunctionKind
from ..layout import layout
from ..mesh import PrimitiveKind, SetupGraph
from .transport import CellFunction, cell_geometry

VTK_TRIANGLE = 5


class VTKFormatError(ValueError):
    pass


@dataclass
class VTKData:
    points: np.ndarray
    cells: np.ndarray                    # (C, 3) point indices
    point_data: dict = field(default_factory=dict)
    cell_data: dict = field(default_factory=dict)
    title: str = ""


def _face_lattice_values(fn: ScalarFunction, prim, level, n):
    lay = layout(prim, fn.kind, level, fn.indexing)
    stride = 2 if fn.kind is FunctionKind.P2 else 1
    a, b = np.divmod(np.arange((n + 1) ** 2), n + 1)
    ok = a + b <= n
    idx = lay.frames()[0].lookup(stride * a[ok], stride * b[ok])
    out = np.zeros((n + 1) ** 2)
    out[ok] = fn.values(prim, level)[idx]
    return out


def collect(functions, level, title="hytegrid") -> VTKData:
    """Micro-triangle grid of all faces (points duplicated per face) with data."""
    if not functions:
        raise ValueError("need at least one function to write")
    domain = functions[0].domain
    for f in functions:
        if isinstance(f, ScalarFunction):
            f.sync(level)
        elif f.level != level:
            raise ValueError(f"cell function {f.name!r} lives on level {f.level}, not {level}")
    n = 2**level
    a, b = np.divmod(np.arange((n + 1) ** 2), n + 1)
    ok = a + b <= n
    remap = np.full((n + 1) ** 2, -1, dtype=np.int64)
    remap[ok] = np.arange(ok.sum())
    pts, cells = [], []
    pdata = {f.name: [] for f in functions if isinstance(f, ScalarFunction)}
    cdata = {f.name: [] for f in functions if isinstance(f, CellFunction)}
    offset = 0
    faces = sorted((p for _, p in domain.local_items(PrimitiveKind.FACE)), key=lambda p: p.id)
    for p in faces:
        g = cell_geometry(p, level)
        pts.append(g.xy[ok])
        cells.append(remap[g.nodes] + offset)
        offset += int(ok.sum())
        for f in functions:
            if isinstance(f, ScalarFunction):
                pdata[f.name].append(_face_lattice_values(f, p, level, n)[ok])
            else:
                cdata[f.name].append(f.values(p).copy())
    return VTKData(np.concatenate(pts), np.concatenate(cells),
                   {k: np.concatenate(v) for k, v in pdata.items()},
                   {k: np.concatenate(v) for k, v in cdata.items()}, title)


def _fmt(x) -> str:
    return repr(float(x))


def format_vtk(data: VTKData) -> str:
    npts, ncell = len(data.points), len(data.cells)
    out = ["# vtk DataFile Version 3.0", data.title.replace("\n", " ") or "hytegrid", "ASCII",
           "DATASET UNSTRUCTURED_GRID", f"POINTS {npts} double"]
    out += [f"{_fmt(x)} {_fmt(y)} 0.0" for x, y in data.points]
    out.append(f"CELLS {ncell} {4 * ncell}")
    out += [f"3 {i} {j} {k}" for i, j, k in data.cells]
    out.append(f"CELL_TYPES {ncell}")
    out += [str(VTK_TRIANGLE)] * ncell
    for section, count, fields in (("CELL_DATA", ncell, data.cell_data), ("POINT_DATA", npts, data.point_data)):
        if not fields:
            continue
        out.append(f"{section} {count}")
        for name, vals in fields.items():
            out += [f"SCALARS {_safe(name)} double 1", "LOOKUP_TABLE default"]
            out += [_fmt(v) for v in vals]
    return "\n".join(out) + "\n"


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "_-." else "_" for c in name) or "field"


def write_vtk(functions, level, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_vtk(collect(list(functions), level)))
    return path


def write_partition(setup: SetupGraph, assignment: dict, path) -> Path:
    """Macro-faces as cells, coloured by owning rank."""
    vids = setup.ids(PrimitiveKind.VERTEX)
    index = {v: i for i, v in enumerate(vids)}
    pts = np.array([setup.primitives[v].coords[0] for v in vids], dtype=float)
    faces = setup.ids(PrimitiveKind.FACE)
    cells = np.array([[index[v] for v in setup.primitives[f].vertex_ids] for f in faces], dtype=np.int64)
    data = VTKData(pts, cells, cell_data={"rank": np.array([assignment[f] for f in faces], dtype=float),
                                          "face_id": np.array(faces, dtype=float)}, title="partition")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_vtk(data))
    return path


def read_vtk(text: str) -> VTKData:
    """Parse and validate the subset of legacy VTK written above.

    Checks header, counts, connectivity bounds, cell types and data lengths;
    raises :class:`VTKFormatError` naming the offending line.
    """
    try:
        return _read(text.splitlines())
    except (ValueError, IndexError) as exc:
        if isinstance(exc, VTKFormatError):
            raise
        raise VTKFormatError(f"malformed entry: {exc}") from exc


def _read(lines) -> VTKData:
    pos = 0

    def take(what):
        nonlocal pos
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise VTKFormatError(f"unexpected end of file while reading {what}")
        pos += 1
        return lines[pos - 1].strip()

    def fail(msg):
        raise VTKFormatError(f"line {pos}: {msg}")

    if not take("header").startswith("# vtk DataFile Version"):
        fail("missing '# vtk DataFile Version' header")
    title = take("title")
    if take("format") != "ASCII":
        fail("only ASCII files are supported")
    if take("dataset") != "DATASET UNSTRUCTURED_GRID":
        fail("expected DATASET UNSTRUCTURED_GRID")
    head = take("POINTS").split()
    if len(head) != 3 or head[0] != "POINTS":
        fail("expected 'POINTS n type'")
    npts = int(head[1])
    pts = np.array([[float(t) for t in take("point").split()] for _ in range(npts)]).reshape(npts, -1)
    if npts and pts.shape[1] != 3:
        fail("points need three coordinates")
    head = take("CELLS").split()
    if len(head) != 3 or head[0] != "CELLS":
        fail("expected 'CELLS n size'")
    ncell, size = int(head[1]), int(head[2])
    cells, total = [], 0
    for _ in range(ncell):
        row = [int(t) for t in take("cell").split()]
        if row[0] != len(row) - 1:
            fail("cell point count does not match its connectivity")
        if any(i < 0 or i >= npts for i in row[1:]):
            fail("cell references a point out of range")
        total += len(row)
        cells.append(row[1:])
    if total != size:
        fail(f"CELLS size {size} does not match {total} listed integers")
    head = take("CELL_TYPES").split()
    if head != ["CELL_TYPES", str(ncell)]:
        fail("CELL_TYPES count differs from CELLS")
    for row in cells:
        t = int(take("cell type"))
        if t != VTK_TRIANGLE or len(row) != 3:
            fail(f"unsupported cell type {t}")
    data = VTKData(pts[:, :2] if npts else np.zeros((0, 2)), np.array(cells, dtype=np.int64).reshape(-1, 3),
                   title=title)
    while True:
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            break
        head = take("data section").split()
        if len(head) != 2 or head[0] not in ("POINT_DATA", "CELL_DATA"):
            fail(f"unexpected section {' '.join(head)!r}")
        count = int(head[1])
        if count != (npts if head[0] == "POINT_DATA" else ncell):
            fail(f"{head[0]} count {count} does not match the grid")
        target = data.point_data if head[0] == "POINT_DATA" else data.cell_data
        while pos < len(lines) and lines[pos].startswith("SCALARS"):
            sc = take("SCALARS").split()
            if take("LOOKUP_TABLE").split()[0] != "LOOKUP_TABLE":
                fail("SCALARS needs a LOOKUP_TABLE line")
            target[sc[1]] = np.array([float(take("value")) for _ in range(count)])
    return data


def validate_vtk(path) -> VTKData:
    return read_vtk(Path(path).read_text())
