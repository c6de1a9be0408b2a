"""Polyhedral parametric domains, per-corner coordinates and grid generation.

A domain is a convex polyhedron with unit edges in which every corner has
exactly three incident faces. Each corner ``l`` carries an ordered neighbor
frame ``(j, k, i)``: the corner coordinates ``(u, v, w)`` grow toward ``c_j``,
``c_k`` and ``c_i`` respectively, and the three incident faces are named

* ``top`` (contains ``c_j`` and ``c_k``, where ``w = 0``),
* ``lft`` (contains ``c_j`` and ``c_i``, where ``v = 0``),
* ``rgt`` (contains ``c_k`` and ``c_i``, where ``u = 0``).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, cKDTree

from .errors import DomainError, NumericError

SHAPES = ("tetrahedron", "triangular_prism", "hexahedron", "pentagonal_prism")
ROLES = ("top", "lft", "rgt")

INSIDE_TOL = 1e-9
EDGE_SNAP = 1e-13

# VTK hexahedron: corner h -> the three edge neighbors (i, j, k) forming a
# right-handed frame on the reference cube
HEX_CORNER_NEIGHBORS = np.array(
    [
        [1, 3, 4],
        [2, 0, 5],
        [3, 1, 6],
        [0, 2, 7],
        [7, 5, 0],
        [4, 6, 1],
        [5, 7, 2],
        [6, 4, 3],
    ]
)
HEX_EDGES = np.array(
    [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4], [0, 4], [1, 5], [2, 6], [3, 7]]
)


@dataclass(frozen=True, eq=False)
class PolyhedralDomain:
    name: str
    corners: np.ndarray
    faces: tuple[tuple[int, ...], ...]
    edges: np.ndarray = field(init=False)
    normals: np.ndarray = field(init=False)
    offsets: np.ndarray = field(init=False)
    frames: np.ndarray = field(init=False)
    corner_faces: np.ndarray = field(init=False)

    def __post_init__(self):
        corners = np.array(self.corners, dtype=float)
        faces = tuple(_orient_face(corners, f) for f in self.faces)
        normals = np.array([_face_normal(corners, f) for f in faces])
        offsets = np.einsum("fk,fk->f", normals, np.array([corners[list(f)].mean(axis=0) for f in faces]))
        edges = sorted({tuple(sorted((f[a], f[(a + 1) % len(f)]))) for f in faces for a in range(len(f))})
        edges = np.array(edges, dtype=int)
        for arr in (corners, normals, offsets, edges):
            arr.setflags(write=False)
        object.__setattr__(self, "corners", corners)
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "edges", edges)
        self._validate()
        frames, corner_faces = self._assign_frames()
        frames.setflags(write=False)
        corner_faces.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "corner_faces", corner_faces)

    def _validate(self):
        c = self.corners
        lengths = np.linalg.norm(c[self.edges[:, 0]] - c[self.edges[:, 1]], axis=1)
        if np.abs(lengths - 1.0).max() > 1e-9:
            raise ValueError(f"{self.name}: edges are not unit length")
        for fi, f in enumerate(self.faces):
            if np.abs(c[list(f)] @ self.normals[fi] - self.offsets[fi]).max() > 1e-9:
                raise ValueError(f"{self.name}: face {fi} is not planar")
        signed = c @ self.normals.T - self.offsets
        if signed.max() > 1e-9:
            raise ValueError(f"{self.name}: domain is not convex")
        for l in range(self.n_corners):
            if len(self.neighbors(l)) != 3 or len(self.faces_of(l)) != 3:
                raise ValueError(f"{self.name}: corner {l} is not adjacent to exactly three faces")

    def _assign_frames(self):
        n = self.n_corners
        frames = np.zeros((n, 3), dtype=int)
        corner_faces = np.zeros((n, 3), dtype=int)
        for l in range(n):
            c = self.corners
            for j, k, i in itertools.permutations(sorted(self.neighbors(l))):
                triple = np.dot(np.cross(c[j] - c[l], c[k] - c[l]), c[i] - c[l])
                if triple > 0:
                    break
            frames[l] = (j, k, i)
            corner_faces[l] = (
                self._face_containing(l, j, k),
                self._face_containing(l, j, i),
                self._face_containing(l, k, i),
            )
        return frames, corner_faces

    def _face_containing(self, *verts) -> int:
        for fi, f in enumerate(self.faces):
            if all(v in f for v in verts):
                return fi
        raise ValueError(f"no face contains corners {verts}")

    @property
    def n_corners(self) -> int:
        return self.corners.shape[0]

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def neighbors(self, l: int) -> list[int]:
        e = self.edges
        return sorted(set(e[e[:, 0] == l, 1]) | set(e[e[:, 1] == l, 0]))

    def faces_of(self, l: int) -> list[int]:
        return [fi for fi, f in enumerate(self.faces) if l in f]

    @cached_property
    def face_adjacency(self) -> np.ndarray:
        """Boolean ``(n_corners, n_faces)`` incidence matrix."""
        A = np.zeros((self.n_corners, self.n_faces), dtype=bool)
        for fi, f in enumerate(self.faces):
            A[list(f), fi] = True
        return A

    @cached_property
    def barycenter(self) -> np.ndarray:
        return self.corners.mean(axis=0)

    @cached_property
    def face_barycenters(self) -> np.ndarray:
        return np.array([self.corners[list(f)].mean(axis=0) for f in self.faces])

    @cached_property
    def volume(self) -> float:
        return float(ConvexHull(self.corners).volume)

    def face_role(self, l: int, face: int) -> str:
        idx = np.nonzero(self.corner_faces[l] == face)[0]
        if idx.size == 0:
            raise ValueError(f"face {face} is not adjacent to corner {l}")
        return ROLES[idx[0]]

    def plane_distances(self, p) -> np.ndarray:
        """Unsigned distances to every face plane, shape ``(..., n_faces)``."""
        p = np.asarray(p, dtype=float)
        return np.abs(p @ self.normals.T - self.offsets)

    def check_inside(self, p, tol: float = INSIDE_TOL):
        p = np.asarray(p, dtype=float)
        excess = (p @ self.normals.T - self.offsets).max(axis=-1)
        if np.any(excess > tol):
            raise DomainError(f"point outside the parametric domain by {excess.max():.3e}")

    def chart(self, l: int, role: str) -> FaceChart:
        return self._charts[(l, role)]

    @cached_property
    def _charts(self) -> dict:
        return {(l, r): FaceChart(self, l, r) for l in range(self.n_corners) for r in ROLES}


def _face_normal(corners, f) -> np.ndarray:
    pts = corners[list(f)]
    n = np.zeros(3)
    for a in range(len(f)):
        n += np.cross(pts[a], pts[(a + 1) % len(f)])
    return n / np.linalg.norm(n)


def _orient_face(corners, f) -> tuple[int, ...]:
    f = tuple(int(v) for v in f)
    n = _face_normal(corners, f)
    if np.dot(n, corners[list(f)].mean(axis=0) - corners.mean(axis=0)) < 0:
        f = tuple(reversed(f))
    return f


def _prism(k: int, name: str) -> PolyhedralDomain:
    radius = 0.5 / np.sin(np.pi / k)
    ang = np.pi / 2 + 2 * np.pi * np.arange(k) / k
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    ring -= ring.mean(axis=0)
    bottom = np.column_stack([ring, np.full(k, -0.5)])
    top = np.column_stack([ring, np.full(k, 0.5)])
    faces = [tuple(range(k)), tuple(range(k, 2 * k))]
    faces += [(a, (a + 1) % k, k + (a + 1) % k, k + a) for a in range(k)]
    return PolyhedralDomain(name, np.vstack([bottom, top]), tuple(faces))


def build_domain(shape: str) -> PolyhedralDomain:
    """Catalog polyhedron with unit edges and centroid at the origin."""
    if shape == "tetrahedron":
        c = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]]) / (2 * np.sqrt(2))
        return PolyhedralDomain(shape, c, tuple(itertools.combinations(range(4), 3)))
    if shape == "hexahedron":
        c = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=float) - 0.5
        faces = ((0, 2, 6, 4), (1, 3, 7, 5), (0, 1, 5, 4), (2, 3, 7, 6), (0, 1, 3, 2), (4, 5, 7, 6))
        return PolyhedralDomain(shape, c, faces)
    if shape == "triangular_prism":
        return _prism(3, shape)
    if shape == "pentagonal_prism":
        return _prism(5, shape)
    raise ValueError(f"unknown domain shape {shape!r}; choose from {SHAPES}")


# --- per-corner coordinates -------------------------------------------------


def _coordinate_terms(d: PolyhedralDomain, l: int):
    """(plane index, target corner) pairs defining u, v and w at corner ``l``."""
    j, k, i = d.frames[l]
    top, lft, rgt = d.corner_faces[l]
    return ((rgt, j), (lft, k), (top, i))


def corner_coordinates(d: PolyhedralDomain, l: int, p, check: bool = True) -> np.ndarray:
    """Parameters ``(u, v, w)`` of points ``p`` with respect to corner ``l``."""
    p = np.asarray(p, dtype=float)
    if check:
        d.check_inside(p)
    out = []
    for face, target in _coordinate_terms(d, l):
        dist = np.abs(p @ d.normals[face] - d.offsets[face])
        r = np.linalg.norm(p - d.corners[target], axis=-1)
        out.append(dist / (dist + r))
    return np.stack(out, axis=-1)


def corner_weights(d: PolyhedralDomain, p) -> np.ndarray:
    """All corner blending weights, shape ``(..., n_corners)``; rows sum to one."""
    p = np.asarray(p, dtype=float)
    d2 = d.plane_distances(p) ** 2
    nonadj = ~d.face_adjacency
    prods = np.prod(np.where(nonadj, d2[..., None, :], 1.0), axis=-1)
    total = prods.sum(axis=-1, keepdims=True)
    if np.any(total <= 0) or not np.all(np.isfinite(total)):
        raise NumericError("corner weights undefined: all face-distance products vanish")
    return prods / total


def corner_weight(d: PolyhedralDomain, l: int, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    d.check_inside(p)
    return corner_weights(d, p)[..., l]


# --- face chart inversion ---------------------------------------------------


class FaceChart:
    """Face-restricted corner coordinates of one corner on one adjacent face.

    Works in an orthonormal 2-D frame of the face plane anchored at the
    corner. ``forward`` maps face points to ``(a, b)``; ``invert`` solves the
    reverse problem, clamping to the nearest image point when ``(a, b)`` is
    not attained on the face.
    """

    def __init__(self, d: PolyhedralDomain, l: int, role: str):
        self.corner = l
        self.role = role
        r = ROLES.index(role)
        self.face = int(d.corner_faces[l, r])
        terms = _coordinate_terms(d, l)
        # which two of (u, v, w) live on this face
        axes = {"top": (0, 1), "lft": (0, 2), "rgt": (1, 2)}[role]
        (pa, ta), (pb, tb) = terms[axes[0]], terms[axes[1]]
        c = d.corners
        self.origin = c[l].copy()
        e1 = c[ta] - c[l]
        e1 /= np.linalg.norm(e1)
        n = d.normals[self.face]
        e2 = np.cross(n, e1)
        if np.dot(e2, c[tb] - c[l]) < 0:
            e2 = -e2
        self.basis = np.stack([e1, e2])
        poly = (c[list(d.faces[self.face])] - self.origin) @ self.basis.T
        if _signed_area(poly) < 0:
            poly = poly[::-1]
        self.polygon = poly
        # inward distance to each coordinate plane is linear in the 2-D position
        self.grad_a = -(self.basis @ d.normals[pa])
        self.grad_b = -(self.basis @ d.normals[pb])
        self.target_a = (c[ta] - self.origin) @ self.basis.T
        self.target_b = (c[tb] - self.origin) @ self.basis.T
        self.len_a = float(np.linalg.norm(self.target_a))
        self.len_b = float(np.linalg.norm(self.target_b))
        self.height_a = float(self.grad_a @ self.target_a)
        self.height_b = float(self.grad_b @ self.target_b)
        fv = list(d.faces[self.face])
        self.far_edges = [
            (poly[m], poly[(m + 1) % len(poly)])
            for m in range(len(poly))
            if not (np.allclose(poly[m], 0) or np.allclose(poly[(m + 1) % len(poly)], 0))
        ]
        assert len(self.far_edges) == len(fv) - 2

    def to_3d(self, x) -> np.ndarray:
        return self.origin + np.asarray(x) @ self.basis

    def to_2d(self, q) -> np.ndarray:
        return (np.asarray(q, dtype=float) - self.origin) @ self.basis.T

    def forward2d(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        sa = np.abs(x @ self.grad_a)
        sb = np.abs(x @ self.grad_b)
        ra = np.linalg.norm(x - self.target_a, axis=-1)
        rb = np.linalg.norm(x - self.target_b, axis=-1)
        return np.stack([sa / (sa + ra), sb / (sb + rb)], axis=-1)

    def _jacobian(self, x) -> np.ndarray:
        J = np.empty(x.shape[:-1] + (2, 2))
        for row, (g, t) in enumerate(((self.grad_a, self.target_a), (self.grad_b, self.target_b))):
            s = x @ g
            sign = np.where(s < 0, -1.0, 1.0)
            s = np.abs(s)
            diff = x - t
            r = np.linalg.norm(diff, axis=-1)
            rs = np.where(r > 0, r, 1.0)
            den = (s + r) ** 2
            den = np.where(den > 0, den, 1.0)
            J[..., row, :] = (r[..., None] * sign[..., None] * g - s[..., None] * diff / rs[..., None]) / den[..., None]
        return J

    def project(self, x) -> np.ndarray:
        """Nearest points of the (convex) face polygon."""
        x = np.array(x, dtype=float)
        P = self.polygon
        E = np.roll(P, -1, axis=0) - P
        outward = np.stack([E[:, 1], -E[:, 0]], axis=1)
        outward /= np.linalg.norm(outward, axis=1, keepdims=True)
        excess = np.einsum("ek,nek->ne", outward, x[:, None, :] - P[None])
        outside = excess.max(axis=1) > 0
        if np.any(outside):
            y = x[outside]
            t = np.einsum("nek,ek->ne", y[:, None, :] - P[None], E) / np.einsum("ek,ek->e", E, E)
            t = np.clip(t, 0.0, 1.0)
            cand = P[None] + t[..., None] * E[None]
            dist = np.linalg.norm(cand - y[:, None, :], axis=-1)
            x[outside] = cand[np.arange(y.shape[0]), dist.argmin(axis=1)]
        return x

    def _newton(self, x, ab, iters=40, tol=1e-14):
        x = self.project(x)
        F = self.forward2d(x) - ab
        res = np.linalg.norm(F, axis=1)
        active = res > tol
        for _ in range(iters):
            if not np.any(active):
                break
            idx = np.nonzero(active)[0]
            J = self._jacobian(x[idx])
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            ok = np.abs(det) > 1e-300
            det = np.where(ok, det, 1.0)
            f = F[idx]
            step = -np.stack(
                [(J[:, 1, 1] * f[:, 0] - J[:, 0, 1] * f[:, 1]), (-J[:, 1, 0] * f[:, 0] + J[:, 0, 0] * f[:, 1])], axis=1
            ) / det[:, None]
            # gradient direction where the Jacobian is singular
            grad = np.einsum("nij,ni->nj", J, f)
            step[~ok] = -grad[~ok]
            lam = np.ones(idx.size)
            accepted = np.zeros(idx.size, dtype=bool)
            for _ in range(12):
                todo = ~accepted
                if not np.any(todo):
                    break
                trial = self.project(x[idx[todo]] + lam[todo, None] * step[todo])
                Ft = self.forward2d(trial) - ab[idx[todo]]
                rt = np.linalg.norm(Ft, axis=1)
                better = rt < res[idx[todo]]
                sel = np.nonzero(todo)[0][better]
                x[idx[sel]] = trial[better]
                F[idx[sel]] = Ft[better]
                res[idx[sel]] = rt[better]
                accepted[sel] = True
                lam[todo] *= 0.5
            stalled = ~accepted
            active[idx[stalled]] = False
            active[idx] &= res[idx] > tol
        return x, res

    def _seed_grid(self, n=33):
        P = self.polygon
        lo, hi = P.min(axis=0), P.max(axis=0)
        gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n))
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        return np.unique(np.vstack([self.project(pts), P]), axis=0)

    def _edge_clamp(self, ab):
        best_x = np.zeros((ab.shape[0], 2))
        best_r = np.full(ab.shape[0], np.inf)
        ts = np.linspace(0.0, 1.0, 129)
        for p0, p1 in self.far_edges:
            pts = p0 + ts[:, None] * (p1 - p0)
            coords = self.forward2d(pts)
            dist = np.linalg.norm(coords[None] - ab[:, None, :], axis=-1)
            k = dist.argmin(axis=1)
            lo = np.clip(ts[k] - ts[1], 0, 1)
            hi = np.clip(ts[k] + ts[1], 0, 1)
            g = (np.sqrt(5) - 1) / 2
            for _ in range(40):
                m1 = hi - g * (hi - lo)
                m2 = lo + g * (hi - lo)
                f1 = np.linalg.norm(self.forward2d(p0 + m1[:, None] * (p1 - p0)) - ab, axis=1)
                f2 = np.linalg.norm(self.forward2d(p0 + m2[:, None] * (p1 - p0)) - ab, axis=1)
                left = f1 < f2
                hi = np.where(left, m2, hi)
                lo = np.where(left, lo, m1)
            t = 0.5 * (lo + hi)
            x = p0 + t[:, None] * (p1 - p0)
            r = np.linalg.norm(self.forward2d(x) - ab, axis=1)
            better = r < best_r
            best_x[better] = x[better]
            best_r[better] = r[better]
        return best_x, best_r

    def invert2d(self, a, b, hint=None):
        """2-D face positions for coordinate pairs plus a clamped-flag array.

        The map is not injective near the far vertices of pentagonal faces;
        there the preimage reached from ``hint`` (2-D face positions, one per
        query) is returned. Without a hint Newton starts from the linear
        estimate along the two corner edges.
        """
        a = np.asarray(a, dtype=float).ravel()
        b = np.asarray(b, dtype=float).ravel()
        if np.any(a < -1e-12) or np.any(b < -1e-12) or np.any(a > 1 + 1e-12) or np.any(b > 1 + 1e-12):
            raise DomainError("face coordinates must lie in [0, 1]^2")
        ab = np.clip(np.stack([a, b], axis=1), 0.0, 1.0)
        # roundoff-level coordinates are treated as lying on the corner edges
        ab[ab < EDGE_SNAP] = 0.0
        x = np.zeros_like(ab)
        clamped = np.zeros(ab.shape[0], dtype=bool)

        on_a = ab[:, 1] == 0.0
        on_b = (ab[:, 0] == 0.0) & ~on_a
        ta = ab[on_a, 0] * self.len_a / (ab[on_a, 0] * self.len_a + self.height_a * (1 - ab[on_a, 0]))
        x[on_a] = ta[:, None] * self.target_a
        tb = ab[on_b, 1] * self.len_b / (ab[on_b, 1] * self.len_b + self.height_b * (1 - ab[on_b, 1]))
        x[on_b] = tb[:, None] * self.target_b

        gen = np.nonzero(~(on_a | on_b))[0]
        if gen.size:
            sub = ab[gen]
            if hint is None:
                seed = sub[:, :1] * self.target_a + sub[:, 1:] * self.target_b
            else:
                seed = np.asarray(hint, dtype=float).reshape(-1, 2)[gen]
            xs, res = self._newton(seed, sub)
            bad = res > 1e-12
            if np.any(bad):
                seeds = self._seed_grid()
                seed_coords = self.forward2d(seeds)
                bi = np.nonzero(bad)[0]
                for chunk in np.array_split(bi, max(1, bi.size // 2000)):
                    dist = np.linalg.norm(seed_coords[None] - sub[chunk, None, :], axis=-1)
                    xs2, res2 = self._newton(seeds[dist.argmin(axis=1)], sub[chunk])
                    better = res2 < res[chunk]
                    xs[chunk[better]] = xs2[better]
                    res[chunk[better]] = res2[better]
                bad = res > 1e-12
            if np.any(bad):
                bi = np.nonzero(bad)[0]
                xc, rc = self._edge_clamp(sub[bi])
                better = rc < res[bi]
                xs[bi[better]] = xc[better]
                res[bi[better]] = rc[better]
                clamped[gen[bi]] = res[bi] > 1e-10
            x[gen] = xs
        if not np.all(np.isfinite(x)):
            raise NumericError("face coordinate inversion produced non-finite points")
        return x, clamped

    def invert(self, a, b, hint=None):
        """3-D face points; ``hint`` is an optional array of 3-D seed points."""
        hint2d = None if hint is None else self.to_2d(hint)
        x, clamped = self.invert2d(a, b, hint2d)
        return self.to_3d(x), clamped


def _signed_area(P) -> float:
    x, y = P[:, 0], P[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def invert_face_coordinates(d: PolyhedralDomain, l: int, face: str, a, b, hint=None) -> np.ndarray:
    """Point on the ``face`` (a role name) of corner ``l`` with coordinates ``(a, b)``."""
    scalar = np.ndim(a) == 0 and np.ndim(b) == 0
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    if hint is not None:
        hint = np.asarray(hint, dtype=float).reshape(-1, 3)
    q, _ = d.chart(l, face).invert(a.ravel(), b.ravel(), hint)
    return q[0] if scalar else q.reshape(a.shape + (3,))


# --- dual split and grids ---------------------------------------------------


def dual_split(d: PolyhedralDomain) -> np.ndarray:
    """One hexahedral block per corner, ``(n_corners, 8, 3)`` in VTK order.

    Local axes follow the corner frame: vertex 1 is the midpoint toward
    ``c_j``, vertex 3 toward ``c_k`` and vertex 4 toward ``c_i``.
    """
    c = d.corners
    fb = d.face_barycenters
    blocks = np.empty((d.n_corners, 8, 3))
    for l in range(d.n_corners):
        j, k, i = d.frames[l]
        top, lft, rgt = d.corner_faces[l]
        blocks[l] = [
            c[l],
            0.5 * (c[l] + c[j]),
            fb[top],
            0.5 * (c[l] + c[k]),
            0.5 * (c[l] + c[i]),
            fb[lft],
            d.barycenter,
            fb[rgt],
        ]
    return blocks


def trilinear(block: np.ndarray, s, t, r) -> np.ndarray:
    s, t, r = (np.asarray(x, dtype=float)[..., None] for x in (s, t, r))
    b = block
    return (
        (1 - s) * (1 - t) * (1 - r) * b[0]
        + s * (1 - t) * (1 - r) * b[1]
        + s * t * (1 - r) * b[2]
        + (1 - s) * t * (1 - r) * b[3]
        + (1 - s) * (1 - t) * r * b[4]
        + s * (1 - t) * r * b[5]
        + s * t * r * b[6]
        + (1 - s) * t * r * b[7]
    )


def block_volume(block: np.ndarray) -> float:
    """Exact volume of a trilinear block (2-point Gauss per axis)."""
    g = 0.5 + np.array([-1, 1]) / (2 * np.sqrt(3))
    s, t, r = (x.ravel() for x in np.meshgrid(g, g, g, indexing="ij"))
    b = block
    # trilinear map is affine along each axis: derivatives are edge differences
    ds = trilinear(np.array([b[1] - b[0], b[1] - b[0], b[2] - b[3], b[2] - b[3], b[5] - b[4], b[5] - b[4], b[6] - b[7], b[6] - b[7]]), s, t, r)
    dt = trilinear(np.array([b[3] - b[0], b[2] - b[1], b[2] - b[1], b[3] - b[0], b[7] - b[4], b[6] - b[5], b[6] - b[5], b[7] - b[4]]), s, t, r)
    dr = trilinear(np.array([b[4] - b[0], b[5] - b[1], b[6] - b[2], b[7] - b[3]] * 2), s, t, r)
    J = np.stack([ds, dt, dr], axis=-1)
    return float(np.linalg.det(J).sum() / 8)


@dataclass(frozen=True, eq=False)
class HexGrid:
    """Conforming multiblock hexahedral grid.

    ``cells`` index ``points`` in VTK hexahedron order; ``block_ids`` holds the
    global vertex index of every lattice node of every block.
    """

    points: np.ndarray
    cells: np.ndarray
    cell_block: np.ndarray
    block_ids: np.ndarray
    resolution: tuple[int, int, int]
    boundary: np.ndarray
    adj_indptr: np.ndarray
    adj_indices: np.ndarray

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        return self.adj_indices[self.adj_indptr[i] : self.adj_indptr[i + 1]]

    def with_points(self, points) -> HexGrid:
        points = np.asarray(points, dtype=float)
        if points.shape != self.points.shape:
            raise ValueError("point array shape does not match the grid")
        return replace(self, points=points)


def _adjacency(cells: np.ndarray, n: int):
    e = cells[:, HEX_EDGES].reshape(-1, 2)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    A = sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    A.sort_indices()
    return A.indptr.astype(np.int64), A.indices.astype(np.int64)


def generate_parametric_grid(d: PolyhedralDomain, M: int, N: int, L: int) -> HexGrid:
    """Discretize every dual block into an ``M x N x L`` lattice and merge them."""
    if min(M, N, L) < 1:
        raise ValueError("grid resolution must be at least 1 in every direction")
    blocks = dual_split(d)
    s, t, r = np.meshgrid(
        np.linspace(0, 1, M + 1), np.linspace(0, 1, N + 1), np.linspace(0, 1, L + 1), indexing="ij"
    )
    raw = np.concatenate([trilinear(b, s, t, r).reshape(-1, 3) for b in blocks])
    per_block = (M + 1) * (N + 1) * (L + 1)

    tol = 1e-9
    pairs = cKDTree(raw).query_pairs(tol, output_type="ndarray")
    G = sparse.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])) if len(pairs) else ([], ([], [])), shape=(raw.shape[0],) * 2)
    _, labels = connected_components(G, directed=False)
    # number merged vertices in order of first appearance
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    relabel = np.empty(order.size, dtype=np.int64)
    relabel[order] = np.arange(order.size)
    gid = relabel[labels]
    points = raw[np.sort(first)]

    block_ids = gid.reshape(len(blocks), M + 1, N + 1, L + 1)
    owners = np.zeros(points.shape[0], dtype=int)
    for b in range(len(blocks)):
        owners[np.unique(block_ids[b])] += 1

    excess = (points @ d.normals.T - d.offsets).max(axis=1)
    boundary = excess > -tol

    shell = np.zeros((M + 1, N + 1, L + 1), dtype=bool)
    shell[[0, -1]] = shell[:, [0, -1]] = shell[:, :, [0, -1]] = True
    face_nodes = np.unique(block_ids[:, shell])
    lonely = face_nodes[(owners[face_nodes] < 2) & ~boundary[face_nodes]]
    if lonely.size:
        raise ValueError(
            f"resolution {M}x{N}x{L} does not conform across block faces on {d.name}; "
            "use equal resolutions along shared block directions"
        )

    i, j, k = np.meshgrid(np.arange(M), np.arange(N), np.arange(L), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    offsets = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]
    cells = np.concatenate(
        [np.stack([block_ids[b, i + di, j + dj, k + dk] for di, dj, dk in offsets], axis=1) for b in range(len(blocks))]
    )
    cell_block = np.repeat(np.arange(len(blocks)), M * N * L)
    indptr, indices = _adjacency(cells, points.shape[0])
    assert per_block * len(blocks) == raw.shape[0]
    return HexGrid(points, cells, cell_block, block_ids, (M, N, L), boundary, indptr, indices)
