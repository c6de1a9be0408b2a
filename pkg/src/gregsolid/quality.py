"""Scaled Jacobians of hexahedral grids and the optimization objective.

Jacobians are evaluated at all eight corners of every cell and stored
cell-major. The objective terms come with gradients with respect to the
grid vertices so that the optimizer can pull them back through the
(affine) grid map.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import sparse

from .domain import HEX_CORNER_NEIGHBORS, HexGrid

EPSILON = 1e-5
DEGENERATE_EDGE = 1e-14

# six tetrahedra around the 0-6 diagonal, positively oriented for VTK hexahedra
HEX_TETS = np.array([[0, 1, 2, 6], [0, 2, 3, 6], [0, 3, 7, 6], [0, 7, 4, 6], [0, 4, 5, 6], [0, 5, 1, 6]])


def _edge_vectors(points, cells):
    """Edge vectors ``(K, 8, 3, 3)``: for corner h, rows P_i - P_h, P_j - P_h, P_k - P_h."""
    P = np.asarray(points, dtype=float)[np.asarray(cells)]
    nb = P[:, HEX_CORNER_NEIGHBORS]  # (K, 8, 3, 3)
    return nb - P[:, :, None, :]


def jacobian_values(points, cells):
    """Scaled Jacobians ``(K, 8)`` and a per-cell degeneracy flag."""
    E = _edge_vectors(points, cells)
    lengths = np.linalg.norm(E, axis=-1)
    degenerate = lengths < DEGENERATE_EDGE
    safe = np.where(degenerate, 1.0, lengths)
    Nrm = E / safe[..., None]
    J = np.einsum("...i,...i->...", Nrm[..., 0, :], np.cross(Nrm[..., 1, :], Nrm[..., 2, :]))
    bad = degenerate.any(axis=-1)
    J = np.where(bad, 0.0, J)
    return J, bad.any(axis=-1)


def scaled_jacobian(cell, h: int) -> float:
    """Scaled Jacobian of one cell (8 points in VTK order) at corner ``h``."""
    J, _ = jacobian_values(np.asarray(cell, dtype=float), np.arange(8)[None])
    return float(J[0, h])


def jacobian_vjp(points, cells, dJ) -> np.ndarray:
    """Vertex gradient of ``sum(dJ * J)`` for cotangents ``dJ`` of shape ``(K, 8)``."""
    E = _edge_vectors(points, cells)
    lengths = np.linalg.norm(E, axis=-1)
    degenerate = (lengths < DEGENERATE_EDGE).any(axis=-1)
    safe = np.where(lengths < DEGENERATE_EDGE, 1.0, lengths)
    Nrm = E / safe[..., None]
    a, b, c = Nrm[..., 0, :], Nrm[..., 1, :], Nrm[..., 2, :]
    J = np.einsum("...i,...i->...", a, np.cross(b, c))
    la, lb, lc = (safe[..., k, None] for k in range(3))
    Ja = J[..., None]
    ga = np.cross(b, c) / la - Ja * a / la
    gb = np.cross(c, a) / lb - Ja * b / lb
    gc = np.cross(a, b) / lc - Ja * c / lc
    w = np.where(degenerate, 0.0, np.asarray(dJ, dtype=float))[..., None]
    cells = np.asarray(cells)
    G = np.zeros((np.asarray(points).shape[0], 3))
    nbr = cells[:, HEX_CORNER_NEIGHBORS]  # (K, 8, 3)
    np.add.at(G, nbr[..., 0], w * ga)
    np.add.at(G, nbr[..., 1], w * gb)
    np.add.at(G, nbr[..., 2], w * gc)
    np.add.at(G, cells, -w * (ga + gb + gc))
    return G


@dataclass(frozen=True)
class JacobianVector:
    values: np.ndarray
    degenerate_cells: np.ndarray

    @property
    def positive(self) -> np.ndarray:
        return np.where(self.values > 0, self.values, 0.0)

    @property
    def negative(self) -> np.ndarray:
        return np.where(self.values < 0, self.values, 0.0)

    def per_cell(self) -> np.ndarray:
        return self.values.reshape(-1, 8)


def jacobian_vector(mesh: HexGrid) -> JacobianVector:
    J, bad = jacobian_values(mesh.points, mesh.cells)
    return JacobianVector(J.ravel(), bad)


def e_sparse(jv) -> tuple[int, float]:
    """``(l0, l1)`` of the negative part; zero entries count in neither."""
    J = _values(jv)
    neg = J[J < 0]
    return int(neg.size), float(np.abs(neg).sum())


def e_positive(jv, eps: float = EPSILON) -> float:
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    J = _values(jv)
    return float(np.sum(1.0 / (J[J >= 0] + eps)))


def _values(jv) -> np.ndarray:
    return jv.values if isinstance(jv, JacobianVector) else np.asarray(jv, dtype=float).ravel()


def smoothing_operator(grid: HexGrid) -> sparse.csr_matrix:
    """Rows ``P_i - mean(neighbors)`` for interior vertices only."""
    n = grid.n_points
    deg = np.diff(grid.adj_indptr)
    rows = np.repeat(np.arange(n), deg)
    vals = -1.0 / np.repeat(np.maximum(deg, 1), deg)
    L = sparse.csr_matrix((vals, (rows, grid.adj_indices)), shape=(n, n)) + sparse.identity(n, format="csr")
    interior = np.nonzero(~grid.boundary)[0]
    return L[interior]


def e_smooth(mesh: HexGrid, op=None) -> float:
    A = smoothing_operator(mesh) if op is None else op
    r = A @ mesh.points
    return float(np.sum(r * r))


def objective(mesh: HexGrid, mu: float, nu: float, eps: float = EPSILON, norm: str = "l1", jv=None, op=None):
    """Combined objective and its terms ``{smooth, positive, sparse}``."""
    if norm not in ("l0", "l1"):
        raise ValueError("norm must be 'l0' or 'l1'")
    jv = jacobian_vector(mesh) if jv is None else jv
    l0, l1 = e_sparse(jv)
    terms = {
        "smooth": e_smooth(mesh, op),
        "positive": e_positive(jv, eps),
        "sparse": float(l0) if norm == "l0" else l1,
    }
    total = terms["smooth"] + mu * terms["positive"] + nu * terms["sparse"]
    return total, terms


def cell_volumes(points, cells) -> np.ndarray:
    """Absolute cell volumes from the six-tetrahedron decomposition."""
    P = np.asarray(points, dtype=float)[np.asarray(cells)][:, HEX_TETS]  # (K, 6, 4, 3)
    D = P[..., 1:, :] - P[..., :1, :]
    return np.abs(np.linalg.det(D).sum(axis=1) / 6.0)


def negative_volume_ratio(mesh: HexGrid, jv=None) -> float:
    jv = jacobian_vector(mesh) if jv is None else jv
    vol = cell_volumes(mesh.points, mesh.cells)
    total = vol.sum()
    if total == 0:
        return 0.0
    bad = (jv.per_cell() < 0).any(axis=1)
    return float(min(1.0, vol[bad].sum() / total))


@dataclass(frozen=True)
class QualityReport:
    avg_J: float
    min_J: float
    max_J: float
    neg_ratio: float
    n_negative: int
    n_jacobians: int
    resolution: tuple
    seconds: float = 0.0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["resolution"] = list(self.resolution)
        return out


def quality_report(mesh: HexGrid, seconds: float = 0.0) -> QualityReport:
    jv = jacobian_vector(mesh)
    J = jv.values
    return QualityReport(
        avg_J=float(J.mean()),
        min_J=float(J.min()),
        max_J=float(J.max()),
        neg_ratio=negative_volume_ratio(mesh, jv),
        n_negative=e_sparse(jv)[0],
        n_jacobians=int(J.size),
        resolution=tuple(int(x) for x in mesh.resolution),
        seconds=float(seconds),
    )
