"""Gregory corner interpolators and the blended Gregory solid.

The corner interpolator is affine in the tangent-patch control points, so
every evaluation is split into a boundary part (from the surface views) and
per-role coefficient matrices acting on the tangent control nets. The same
split gives the grid map as ``P = P0 + B @ X`` for the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boundary import (
    BoundaryPatch,
    CornerPatchView,
    TangentPatch,
    build_initial_tangent_patches,
    corner_views,
    estimate_cross_tangents,
    fit_tangent_fields,
)
from .domain import ROLES, HexGrid, PolyhedralDomain, corner_coordinates, corner_weights
from .errors import DomainError, NumericError
from .spline import patch_coefficients

GUARD = 1e-12


def _blend2(x, y):
    """Weights of a two-term rational blend ``(x*A + y*B) / (x + y)``."""
    den = x + y
    small = den < GUARD
    safe = np.where(small, 1.0, den)
    wa = np.where(small, 0.5, x / safe)
    wb = np.where(small, 0.5, y / safe)
    return wa, wb


def _blend_corner(u, v, w):
    """Weights of the twist term on T^rgt_vw, T^lft_uw and T^top_uv."""
    den = u * v * (u + v) + u * w * (u + w) + v * w * (v + w)
    small = den < GUARD
    safe = np.where(small, 1.0, den)
    third = 1.0 / 3.0
    w_rgt = np.where(small, third, u * u * (v + w) / safe)
    w_lft = np.where(small, third, v * v * (u + w) / safe)
    w_top = np.where(small, third, w * w * (u + v) / safe)
    return w_rgt, w_lft, w_top


def tangent_terms(u, v, w):
    """List of ``(role, a, b, order_a, order_b, coefficient)`` tangent terms."""
    z = np.zeros_like(u)
    # blends of the edge-correction and twist terms
    b1l, b1r = _blend2(v, u)  # (v T^lft_u(0,w) + u T^rgt_v(0,w)) / (u+v)
    b2l, b2t = _blend2(v, w)  # (v T^lft_w(u,0) + w T^top_v(u,0)) / (v+w)
    b3r, b3t = _blend2(u, w)  # (u T^rgt_w(v,0) + w T^top_u(0,v)) / (u+w)
    c_r, c_l, c_t = _blend_corner(u, v, w)
    uv, vw, uw, uvw = u * v, v * w, u * w, u * v * w
    return [
        # face terms
        ("top", u, v, 0, 0, w),
        ("lft", u, w, 0, 0, v),
        ("rgt", v, w, 0, 0, u),
        # edge R(w)
        ("lft", z, w, 0, 0, -v),
        ("rgt", z, w, 0, 0, -u),
        ("lft", z, w, 1, 0, -uv * b1l),
        ("rgt", z, w, 1, 0, -uv * b1r),
        # edge P(u)
        ("top", u, z, 0, 0, -w),
        ("lft", u, z, 0, 0, -v),
        ("lft", u, z, 0, 1, -vw * b2l),
        ("top", u, z, 0, 1, -vw * b2t),
        # edge Q(v)
        ("rgt", v, z, 0, 0, -u),
        ("top", z, v, 0, 0, -w),
        ("rgt", v, z, 0, 1, -uw * b3r),
        ("top", z, v, 1, 0, -uw * b3t),
        # corner tensor
        ("rgt", z, z, 0, 0, u),
        ("lft", z, z, 0, 0, v),
        ("top", z, z, 0, 0, w),
        ("lft", z, z, 1, 0, uv * b1l),
        ("rgt", z, z, 1, 0, uv * b1r),
        ("lft", z, z, 0, 1, vw * b2l),
        ("top", z, z, 0, 1, vw * b2t),
        ("rgt", z, z, 0, 1, uw * b3r),
        ("top", z, z, 1, 0, uw * b3t),
        ("rgt", z, z, 1, 1, uvw * c_r),
        ("lft", z, z, 1, 1, uvw * c_l),
        ("top", z, z, 1, 1, uvw * c_t),
    ]


@dataclass(frozen=True)
class GregoryCornerInterpolator:
    corner: int
    views: dict
    tangents: dict

    def check_params(self, u, v, w):
        uvw = np.stack(np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (u, v, w))), axis=-1)
        if not np.all(np.isfinite(uvw)) or uvw.min(initial=0.0) < -1e-12 or uvw.max(initial=0.0) > 1 + 1e-12:
            raise DomainError("corner parameters must lie in [0, 1]^3")
        return tuple(np.clip(uvw[..., k].ravel(), 0.0, 1.0) for k in range(3))

    def boundary_part(self, u, v, w, hints=None) -> np.ndarray:
        """Sum of the surface terms; ``hints`` maps roles to 3-D seed points."""
        hints = hints or {}
        top, lft, rgt = self.views["top"], self.views["lft"], self.views["rgt"]
        z = np.zeros_like(u)
        return (
            top(u, v, hints.get("top"))
            + lft(u, w, hints.get("lft"))
            + rgt(v, w, hints.get("rgt"))
            - lft(z, w)
            - top(u, z)
            - rgt(v, z)
            + top(z[:1], z[:1])
        )

    def coefficients(self, u, v, w) -> dict[str, np.ndarray]:
        """Per-role weights on the flattened tangent control nets."""
        out = {}
        for role, a, b, oa, ob, coef in tangent_terms(u, v, w):
            T = self.tangents[role].patch
            C = coef[:, None] * patch_coefficients((T.knots_u, T.knots_v), a, b, oa, ob)
            out[role] = out[role] + C if role in out else C
        return out

    def tangent_part(self, u, v, w) -> np.ndarray:
        C = self.coefficients(u, v, w)
        return sum(C[r] @ self.tangents[r].control.reshape(-1, 3) for r in ROLES)

    def __call__(self, u, v, w, hints=None) -> np.ndarray:
        return eval_corner_interpolator(self, u, v, w, hints)


def eval_corner_interpolator(g: GregoryCornerInterpolator, u, v, w, hints=None) -> np.ndarray:
    scalar = all(np.ndim(x) == 0 for x in (u, v, w))
    shape = np.broadcast(np.asarray(u), np.asarray(v), np.asarray(w)).shape
    u, v, w = g.check_params(u, v, w)
    out = g.boundary_part(u, v, w, hints) + g.tangent_part(u, v, w)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"corner {g.corner}: interpolator produced non-finite values")
    return out[0] if scalar else out.reshape(shape + (3,))


def _face_hints(d: PolyhedralDomain, l: int, p: np.ndarray) -> dict:
    hints = {}
    for k, role in enumerate(ROLES):
        f = d.corner_faces[l, k]
        n = d.normals[f]
        hints[role] = p - np.outer(p @ n - d.offsets[f], n)
    return hints


class GregorySolid:
    """Weighted blend of one Gregory corner interpolator per domain corner."""

    def __init__(self, domain: PolyhedralDomain, patches, tangents):
        self.domain = domain
        self.patches = list(patches)
        self.tangents = [dict(t) for t in tangents]
        if len(self.tangents) != domain.n_corners:
            raise ValueError("need one tangent-patch set per corner")
        self.views = [corner_views(domain, self.patches, l) for l in range(domain.n_corners)]
        self.interpolators = [
            GregoryCornerInterpolator(l, self.views[l], self.tangents[l]) for l in range(domain.n_corners)
        ]
        self._index = self._variable_index()

    @classmethod
    def from_patches(cls, domain: PolyhedralDomain, patches, samples: int = 20, h: float = 1e-3):
        """Solid with fitted tangent fields and initial tangent patches."""
        tangents = []
        for l in range(domain.n_corners):
            views = corner_views(domain, patches, l)
            fields = fit_tangent_fields(estimate_cross_tangents(views, samples, h))
            tangents.append(build_initial_tangent_patches(fields))
        return cls(domain, patches, tangents)

    def _variable_index(self) -> np.ndarray:
        rows = []
        for l, tset in enumerate(self.tangents):
            for r, role in enumerate(ROLES):
                for i, j in zip(*np.nonzero(tset[role].free)):
                    for c in range(3):
                        rows.append((l, r, i, j, c))
        return np.array(rows, dtype=int).reshape(-1, 5)

    @property
    def variable_index(self) -> np.ndarray:
        """Rows ``(corner, role, i, j, coordinate)`` for each entry of X."""
        return self._index

    @property
    def n_variables(self) -> int:
        return self._index.shape[0]

    def __call__(self, p) -> np.ndarray:
        return eval_solid(self, p)


def pack_variables(s: GregorySolid) -> np.ndarray:
    parts = [s.tangents[l][role].control[s.tangents[l][role].free].ravel() for l in range(len(s.tangents)) for role in ROLES]
    return np.concatenate(parts) if parts else np.zeros(0)


def unpack_variables(s: GregorySolid, X) -> GregorySolid:
    X = np.asarray(X, dtype=float)
    if X.ndim != 1 or X.size != s.n_variables:
        raise ValueError(f"expected {s.n_variables} variables, got shape {X.shape}")
    tangents = []
    pos = 0
    for tset in s.tangents:
        new = {}
        for role in ROLES:
            tp: TangentPatch = tset[role]
            n = 3 * int(tp.free.sum())
            new[role] = tp.with_free(X[pos : pos + n])
            pos += n
        tangents.append(new)
    return GregorySolid(s.domain, s.patches, tangents)


def eval_solid(s: GregorySolid, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    shape = p.shape
    pts = p.reshape(-1, 3)
    d = s.domain
    W = corner_weights(d, pts)
    out = np.zeros_like(pts)
    for l, g in enumerate(s.interpolators):
        act = np.nonzero(W[:, l] > 0)[0]
        if act.size == 0:
            continue
        q = pts[act]
        uvw = corner_coordinates(d, l, q, check=False)
        R = eval_corner_interpolator(g, uvw[:, 0], uvw[:, 1], uvw[:, 2], _face_hints(d, l, q))
        out[act] += W[act, l, None] * R
    return out.reshape(shape)


@dataclass(frozen=True)
class LinearGridMap:
    """Physical grid vertices as an affine function of the variables.

    ``points(X) = P0 + (B @ X.reshape(-1, 3))``; ``B`` has one column per
    free control point and zero rows at boundary vertices.
    """

    P0: np.ndarray
    B: np.ndarray
    grid: HexGrid

    def points(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.P0 + self.B @ X.reshape(-1, 3)

    def pullback(self, G) -> np.ndarray:
        """Gradient with respect to X from a gradient on the vertices."""
        return (self.B.T @ np.asarray(G).reshape(-1, 3)).ravel()


def linear_grid_map(s: GregorySolid, grid: HexGrid) -> LinearGridMap:
    d = s.domain
    pts = grid.points
    n = pts.shape[0]
    W = corner_weights(d, pts)
    full = np.zeros((n, 3))
    cols = []
    B_blocks = []
    for l, g in enumerate(s.interpolators):
        act = np.nonzero(W[:, l] > 0)[0]
        q = pts[act]
        uvw = corner_coordinates(d, l, q, check=False)
        u, v, w = uvw[:, 0], uvw[:, 1], uvw[:, 2]
        R = g.boundary_part(u, v, w, _face_hints(d, l, q))
        C = g.coefficients(u, v, w)
        for role in ROLES:
            tp = g.tangents[role]
            R = R + C[role] @ tp.control.reshape(-1, 3)
            Bl = np.zeros((n, int(tp.free.sum())))
            Bl[act] = W[act, l, None] * C[role][:, tp.free.ravel()]
            B_blocks.append(Bl)
        full[act] += W[act, l, None] * R
    B = np.concatenate(B_blocks, axis=1) if B_blocks else np.zeros((n, 0))
    B[grid.boundary] = 0.0
    X = pack_variables(s)
    P0 = full - B @ X.reshape(-1, 3)
    if not np.all(np.isfinite(P0)):
        raise NumericError("grid map produced non-finite vertices")
    return LinearGridMap(P0, B, grid)


def map_grid(s: GregorySolid, grid: HexGrid) -> HexGrid:
    return grid.with_points(eval_solid(s, grid.points))
