"""Legacy ASCII VTK export of hexahedral grids."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .domain import HexGrid
from .quality import JacobianVector, jacobian_vector

VTK_HEXAHEDRON = 12


def vertex_min_jacobian(mesh: HexGrid, jv: JacobianVector) -> np.ndarray:
    """Per-vertex minimum over the corner Jacobians of incident cells."""
    J = jv.per_cell()
    if J.shape[0] != mesh.cells.shape[0]:
        raise ValueError(f"Jacobian vector has {J.shape[0]} cells, mesh has {mesh.cells.shape[0]}")
    out = np.full(mesh.points.shape[0], np.inf)
    np.minimum.at(out, mesh.cells.ravel(), J.ravel())
    out[~np.isfinite(out)] = 0.0
    return out


def _num(x) -> str:
    return repr(float(x))


def vtk_text(mesh: HexGrid, jv: JacobianVector | None = None, title: str = "gregsolid hexahedral grid") -> str:
    jv = jacobian_vector(mesh) if jv is None else jv
    scal = vertex_min_jacobian(mesh, jv)
    pts, cells = mesh.points, mesh.cells
    lines = ["# vtk DataFile Version 3.0", title.replace("\n", " ")[:255], "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {len(pts)} double")
    lines += [" ".join(_num(c) for c in p) for p in pts]
    lines.append(f"CELLS {len(cells)} {9 * len(cells)}")
    lines += ["8 " + " ".join(str(int(i)) for i in c) for c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += [str(VTK_HEXAHEDRON)] * len(cells)
    lines.append(f"POINT_DATA {len(pts)}")
    lines.append("SCALARS scaled_jacobian double 1")
    lines.append("LOOKUP_TABLE default")
    lines += [_num(s) for s in scal]
    return "\n".join(lines) + "\n"


def export_vtk(mesh: HexGrid, jv: JacobianVector | None, path) -> None:
    """Write ``mesh`` with per-vertex minimum scaled Jacobians; raises OSError on failure."""
    Path(path).write_text(vtk_text(mesh, jv))
