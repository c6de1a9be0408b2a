"""Boundary patches, per-corner views and tangent-patch construction.

A boundary patch maps the points of one face polygon of the parametric
domain to model space. Each domain corner sees its three adjacent patches
through the face-restricted corner coordinates, giving the views
``S^top(u, v)``, ``S^lft(u, w)`` and ``S^rgt(v, w)``. Cross-boundary
derivatives of those views along the three corner edges are fitted with
cubic curves and turned into bicubic tangent patches whose interior control
points are later optimized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .domain import ROLES, PolyhedralDomain, invert_face_coordinates
from .errors import DomainError, IngestionError, NumericError
from .spline import BSplineCurve, BSplinePatch, KnotVector, eval_patch, fit_curve_lsq

WATERTIGHT_TOL = 1e-7
EDGE_SAMPLES = 64
FD_STEP = 1e-3
FIELD_SAMPLES = 20
FIELDS = ("P_lft", "P_rgt", "Q_lft", "Q_rgt", "R_lft", "R_rgt")

# pairs of fields that must agree at the corner
COMPATIBLE = (("R_rgt", "Q_lft"), ("P_rgt", "R_lft"), ("Q_rgt", "P_lft"))


def face_frame(d: PolyhedralDomain, face: int):
    """Origin and 2-D basis of a face: first vertex, first edge, normal x edge."""
    f = d.faces[face]
    origin = d.corners[f[0]]
    e1 = d.corners[f[1]] - origin
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.cross(d.normals[face], e1)
    return origin, np.stack([e1, e2])


def _inverse_bilinear(P00, P10, P11, P01, x, iters=30):
    """Solve ``bilinear(s, t) = x`` cell by cell (all arrays ``(m, 2)``)."""
    e = P10 - P00
    f = P01 - P00
    g = P11 - P10 - P01 + P00
    # affine seed from the parallelogram part
    det = e[:, 0] * f[:, 1] - e[:, 1] * f[:, 0]
    det = np.where(np.abs(det) < 1e-300, 1e-300, det)
    r = x - P00
    s = np.clip((r[:, 0] * f[:, 1] - r[:, 1] * f[:, 0]) / det, -0.5, 1.5)
    t = np.clip((e[:, 0] * r[:, 1] - e[:, 1] * r[:, 0]) / det, -0.5, 1.5)
    active = np.arange(x.shape[0])
    for _ in range(iters):
        if active.size == 0:
            break
        sa, ta, ga = s[active], t[active], g[active]
        F = P00[active] + sa[:, None] * e[active] + ta[:, None] * f[active] + (sa * ta)[:, None] * ga - x[active]
        Js = e[active] + ta[:, None] * ga
        Jt = f[active] + sa[:, None] * ga
        dj = Js[:, 0] * Jt[:, 1] - Js[:, 1] * Jt[:, 0]
        ok = np.abs(dj) > 1e-14
        dj = np.where(ok, dj, 1.0)
        ds = np.where(ok, (F[:, 0] * Jt[:, 1] - F[:, 1] * Jt[:, 0]) / dj, 0.0)
        dt = np.where(ok, (Js[:, 0] * F[:, 1] - Js[:, 1] * F[:, 0]) / dj, 0.0)
        s_new = np.clip(sa - ds, -0.5, 1.5)
        t_new = np.clip(ta - dt, -0.5, 1.5)
        moved = np.abs(s_new - sa) + np.abs(t_new - ta)
        s[active], t[active] = s_new, t_new
        active = active[moved > 1e-15]
    F = P00 + s[:, None] * e + t[:, None] * f + (s * t)[:, None] * g - x
    return s, t, np.linalg.norm(F, axis=1)


class BoundaryPatch:
    """Evaluable surface over one face polygon."""

    kind = ""

    def __init__(self, d: PolyhedralDomain, face: int):
        self.domain = d
        self.face = int(face)
        self.origin, self.basis = face_frame(d, face)

    def to_2d(self, q) -> np.ndarray:
        return (np.asarray(q, dtype=float) - self.origin) @ self.basis.T

    def evaluate(self, q) -> np.ndarray:
        """Model-space points for face points ``q`` of shape ``(..., 3)``."""
        q = np.asarray(q, dtype=float)
        out = self._evaluate2d(self.to_2d(q.reshape(-1, 3)))
        return out.reshape(q.shape)

    __call__ = evaluate

    def _evaluate2d(self, x):
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError

    def sample_points(self) -> np.ndarray:
        raise NotImplementedError


class TensorSplinePatch(BoundaryPatch):
    """Tensor B-spline patch composed with a bilinear chart of a quad face.

    ``corners`` lists the domain corners sent to parameters (0,0), (1,0),
    (1,1) and (0,1).
    """

    kind = "tensor_spline"

    def __init__(self, d: PolyhedralDomain, face: int, surface: BSplinePatch, corners):
        super().__init__(d, face)
        corners = [int(c) for c in corners]
        if len(d.faces[face]) != 4:
            raise IngestionError(f"face {face}: tensor-spline patches need a quadrilateral face")
        if sorted(corners) != sorted(d.faces[face]):
            raise IngestionError(f"face {face}: chart corners {corners} are not the face's corners")
        f = list(d.faces[face])
        k = f.index(corners[0])
        cyc = f[k:] + f[:k]
        if corners[2] != cyc[2] or {corners[1], corners[3]} != {cyc[1], cyc[3]}:
            raise IngestionError(f"face {face}: chart corners {corners} are not in cyclic order")
        self.surface = surface
        self.corners = corners
        self._quad = self.to_2d(d.corners[corners])

    def _evaluate2d(self, x):
        Q = self._quad
        m = x.shape[0]
        s, t, res = _inverse_bilinear(*(np.broadcast_to(Q[i], (m, 2)) for i in (0, 1, 2, 3)), x)
        if np.any(res > 1e-9) or np.any(s < -1e-9) or np.any(s > 1 + 1e-9) or np.any(t < -1e-9) or np.any(t > 1 + 1e-9):
            raise DomainError(f"face {self.face}: point outside the face polygon")
        return eval_patch(self.surface, np.clip(s, 0, 1), np.clip(t, 0, 1)).reshape(m, 3)

    def descriptor(self) -> dict:
        s = self.surface
        return {
            "face": self.face,
            "kind": self.kind,
            "corners": list(self.corners),
            "degrees": [s.knots_u.degree, s.knots_v.degree],
            "knots_u": s.knots_u.knots.tolist(),
            "knots_v": s.knots_v.knots.tolist(),
            "control": s.control.tolist(),
        }

    def sample_points(self) -> np.ndarray:
        return self.surface.control.reshape(-1, 3)


class SampledGridPatch(BoundaryPatch):
    """Bilinear interpolation over a structured sampling of a face.

    ``params`` holds face-parameter pairs in the face frame (see
    :func:`face_frame`), shape ``(ns, nt, 2)``; ``points`` the model-space
    samples, shape ``(ns, nt, 3)``.
    """

    kind = "sampled_grid"

    def __init__(self, d: PolyhedralDomain, face: int, params, points):
        super().__init__(d, face)
        params = np.array(params, dtype=float)
        points = np.array(points, dtype=float)
        if params.ndim != 3 or params.shape[2] != 2 or params.shape[0] < 2 or params.shape[1] < 2:
            raise IngestionError(f"face {face}: sampled grid parameters must have shape (ns, nt, 2) with ns, nt >= 2")
        if points.shape != params.shape[:2] + (3,):
            raise IngestionError(f"face {face}: sample points shape {points.shape} does not match grid {params.shape[:2]}")
        if not (np.all(np.isfinite(params)) and np.all(np.isfinite(points))):
            raise IngestionError(f"face {face}: sampled grid contains non-finite values")
        self.params = params
        self.points = points
        ns, nt = params.shape[:2]
        c00 = params[:-1, :-1].reshape(-1, 2)
        c10 = params[1:, :-1].reshape(-1, 2)
        c11 = params[1:, 1:].reshape(-1, 2)
        c01 = params[:-1, 1:].reshape(-1, 2)
        self._cells = np.stack([c00, c10, c11, c01], axis=1)
        self._tree = cKDTree(self._cells.mean(axis=1))
        self._shape = (ns - 1, nt - 1)

    def _locate(self, x, k):
        """Containing cell by trying the ``k`` nearest cell centers in turn."""
        k = min(k, self._cells.shape[0])
        _, idx = self._tree.query(x, k=k)
        idx = np.asarray(idx).reshape(x.shape[0], k)
        best = np.full(x.shape[0], -1)
        best_s = np.zeros(x.shape[0])
        best_t = np.zeros(x.shape[0])
        best_bad = np.full(x.shape[0], np.inf)
        todo = np.arange(x.shape[0])
        for c in range(k):
            if todo.size == 0:
                break
            cid = idx[todo, c]
            cell = self._cells[cid]
            s, t, res = _inverse_bilinear(cell[:, 0], cell[:, 1], cell[:, 2], cell[:, 3], x[todo])
            viol = np.maximum.reduce([-s, s - 1, -t, t - 1, np.zeros_like(s)])
            bad = viol + res
            better = bad < best_bad[todo]
            sel = todo[better]
            best[sel] = cid[better]
            best_s[sel] = s[better]
            best_t[sel] = t[better]
            best_bad[sel] = bad[better]
            todo = todo[best_bad[todo] > 1e-12]
        return best, best_s, best_t, best_bad

    def _evaluate2d(self, x):
        cell, s, t, bad = self._locate(x, 8)
        retry = bad > 1e-9
        if np.any(retry):
            r = np.nonzero(retry)[0]
            cell2, s2, t2, bad2 = self._locate(x[r], 64)
            cell[r], s[r], t[r], bad[r] = cell2, s2, t2, bad2
        if np.any(bad > 1e-7):
            raise DomainError(f"face {self.face}: point outside the sampled grid")
        s = np.clip(s, 0, 1)[:, None]
        t = np.clip(t, 0, 1)[:, None]
        i, j = np.unravel_index(cell, self._shape)
        P = self.points
        return (1 - s) * (1 - t) * P[i, j] + s * (1 - t) * P[i + 1, j] + s * t * P[i + 1, j + 1] + (1 - s) * t * P[i, j + 1]

    def descriptor(self) -> dict:
        return {
            "face": self.face,
            "kind": self.kind,
            "params": self.params.tolist(),
            "points": self.points.tolist(),
        }

    def sample_points(self) -> np.ndarray:
        return self.points.reshape(-1, 3)


def patch_from_descriptor(d: PolyhedralDomain, desc: dict) -> BoundaryPatch:
    try:
        face = int(desc["face"])
        kind = desc["kind"]
        if not 0 <= face < d.n_faces:
            raise IngestionError(f"patch refers to face {face}, domain has {d.n_faces} faces")
        if kind == TensorSplinePatch.kind:
            pu, pv = (int(x) for x in desc["degrees"])
            surface = BSplinePatch(
                KnotVector(pu, desc["knots_u"]), KnotVector(pv, desc["knots_v"]), np.array(desc["control"], dtype=float)
            )
            return TensorSplinePatch(d, face, surface, desc["corners"])
        if kind == SampledGridPatch.kind:
            return SampledGridPatch(d, face, desc["params"], desc["points"])
        raise IngestionError(f"face {face}: unknown patch kind {kind!r}")
    except IngestionError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        where = desc.get("face", "?") if isinstance(desc, dict) else "?"
        raise IngestionError(f"face {where}: malformed patch descriptor ({exc})") from exc


def model_diagonal(patches) -> float:
    pts = np.concatenate([p.sample_points() for p in patches])
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def ingest_patches(d: PolyhedralDomain, raw, tol: float = WATERTIGHT_TOL) -> list[BoundaryPatch]:
    """Build one patch per face and check that shared edges agree.

    ``raw`` may mix descriptors (dicts) and :class:`BoundaryPatch` objects.
    """
    patches: dict[int, BoundaryPatch] = {}
    for item in raw:
        p = item if isinstance(item, BoundaryPatch) else patch_from_descriptor(d, item)
        if p.domain is not d and not np.array_equal(p.domain.corners, d.corners):
            raise IngestionError(f"face {p.face}: patch built for a different domain")
        if p.face in patches:
            raise IngestionError(f"face {p.face}: more than one patch")
        patches[p.face] = p
    missing = [f for f in range(d.n_faces) if f not in patches]
    if missing:
        raise IngestionError(f"missing patch for face {missing[0]}")
    ordered = [patches[f] for f in range(d.n_faces)]
    check_watertight(d, ordered, tol)
    return ordered


def check_watertight(d: PolyhedralDomain, patches, tol: float = WATERTIGHT_TOL) -> float:
    """Largest gap along shared edges; raises when above ``tol`` x diagonal."""
    diag = model_diagonal(patches)
    t = np.linspace(0.0, 1.0, EDGE_SAMPLES)[:, None]
    worst = 0.0
    for a, b in d.edges:
        fa, fb = [f for f in range(d.n_faces) if a in d.faces[f] and b in d.faces[f]]
        q = (1 - t) * d.corners[a] + t * d.corners[b]
        try:
            gap = np.linalg.norm(patches[fa](q) - patches[fb](q), axis=1).max()
        except DomainError as exc:
            raise IngestionError(f"edge ({a}, {b}): patch on face {fa} or {fb} does not cover the edge ({exc})") from exc
        worst = max(worst, float(gap))
        if gap > tol * diag:
            raise IngestionError(
                f"edge ({a}, {b}) between faces {fa} and {fb}: patches differ by {gap:.3e} (tolerance {tol * diag:.3e})"
            )
    return worst


class CornerPatchView:
    """A boundary patch seen from one corner, ``S(a, b)`` on ``[0, 1]^2``."""

    def __init__(self, d: PolyhedralDomain, patch: BoundaryPatch, corner: int, role: str):
        if int(d.corner_faces[corner, ROLES.index(role)]) != patch.face:
            raise ValueError(f"patch of face {patch.face} is not the {role} face of corner {corner}")
        self.domain = d
        self.patch = patch
        self.corner = int(corner)
        self.role = role
        self.chart = d.chart(corner, role)

    def __call__(self, a, b, hint=None) -> np.ndarray:
        return self.evaluate(a, b, hint)[0]

    def evaluate(self, a, b, hint=None):
        """Points and a flag array telling which queries were clamped."""
        scalar = np.ndim(a) == 0 and np.ndim(b) == 0
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        if hint is not None:
            hint = np.asarray(hint, dtype=float).reshape(-1, 3)
        q, clamped = self.chart.invert(a.ravel(), b.ravel(), hint)
        out = self.patch(q)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"corner {self.corner} {self.role} view evaluated to non-finite points")
        if scalar:
            return out[0], clamped[0]
        return out.reshape(a.shape + (3,)), clamped.reshape(a.shape)

    def face_point(self, a, b, hint=None) -> np.ndarray:
        return invert_face_coordinates(self.domain, self.corner, self.role, a, b, hint)


def corner_views(d: PolyhedralDomain, patches, l: int) -> dict[str, CornerPatchView]:
    return {r: CornerPatchView(d, patches[int(d.corner_faces[l, k])], l, r) for k, r in enumerate(ROLES)}


# field name -> (view role, which argument is the edge parameter)
# the differenced argument is the other one
_FIELD_SOURCES = {
    "P_lft": ("lft", 0),  # dS_lft/dw at w=0, along u
    "P_rgt": ("top", 0),  # dS_top/dv at v=0, along u
    "Q_lft": ("top", 1),  # dS_top/du at u=0, along v
    "Q_rgt": ("rgt", 0),  # dS_rgt/dw at w=0, along v
    "R_lft": ("rgt", 1),  # dS_rgt/dv at v=0, along w
    "R_rgt": ("lft", 1),  # dS_lft/du at u=0, along w
}


def estimate_cross_tangents(views: dict, samples: int = FIELD_SAMPLES, h: float = FD_STEP) -> dict:
    """One-sided difference samples ``(t, values)`` of the six fields.

    Samples whose offset point falls outside the image of the face map
    (the view clamps it) are dropped.
    """
    if samples < 8:
        raise ValueError("need at least 8 samples per field")
    t = np.linspace(0.0, 1.0, samples)
    out = {}
    for name, (role, along) in _FIELD_SOURCES.items():
        view = views[role]
        z = np.zeros_like(t)
        hh = np.full_like(t, h)
        if along == 0:
            base, _ = view.evaluate(t, z)
            off, clamped = view.evaluate(t, hh)
        else:
            base, _ = view.evaluate(z, t)
            off, clamped = view.evaluate(hh, t)
        keep = ~clamped
        out[name] = (t[keep], (off[keep] - base[keep]) / h)
    return out


@dataclass
class TangentFieldSet:
    fields: dict[str, BSplineCurve]

    def __getitem__(self, name: str) -> BSplineCurve:
        return self.fields[name]



def enforce_compatibility(fields: dict[str, BSplineCurve]) -> dict[str, BSplineCurve]:
    """Average each compatible pair's corner controls and store one value."""
    ctrl = {k: np.array(c.control) for k, c in fields.items()}
    for a, b in COMPATIBLE:
        mean = 0.5 * (ctrl[a][0] + ctrl[b][0])
        ctrl[a][0] = mean
        ctrl[b][0] = mean
    return {k: BSplineCurve(fields[k].knots, ctrl[k]) for k in fields}


def fit_tangent_fields(samples: dict, degree: int = 3, n_ctrl: int = 4) -> TangentFieldSet:
    fitted = {name: fit_curve_lsq(samples[name], degree, n_ctrl) for name in FIELDS}
    return TangentFieldSet(enforce_compatibility(fitted))


@dataclass
class TangentPatch:
    """Bicubic tangent patch; ``free`` marks the optimizable controls."""

    patch: BSplinePatch
    free: np.ndarray = field(repr=False)

    @property
    def control(self) -> np.ndarray:
        return self.patch.control

    def with_free(self, values) -> TangentPatch:
        ctrl = np.array(self.patch.control)
        ctrl[self.free] = np.asarray(values, dtype=float).reshape(-1, 3)
        return TangentPatch(self.patch.with_control(ctrl), self.free)


# role -> (field along the first argument, field along the second argument)
PATCH_FIELDS = {"top": ("P_lft", "Q_rgt"), "lft": ("P_rgt", "R_lft"), "rgt": ("Q_lft", "R_rgt")}


def far_corner(first: BSplineCurve, second: BSplineCurve) -> np.ndarray:
    end1 = first.control[-1]
    end2 = second.control[-1]
    mid = 0.5 * (end1 + end2)
    return mid + 2.0 * (mid - first.control[0])


def coons_tangent_patch(first: BSplineCurve, second: BSplineCurve) -> TangentPatch:
    """Coons fill of two fields and the two segments to the far corner.

    The fill is built directly in the fields' spline space: linear blends
    use Greville abscissae, which is the same surface as the bilinear Coons
    patch after degree elevation.
    """
    ku, kv = first.knots, second.knots
    A = first.control
    B = second.control
    C = far_corner(first, second)
    gu = ku.greville()[:, None, None]
    gv = kv.greville()[None, :, None]
    X00, X10, X01 = A[0], A[-1], B[-1]
    right = (1 - kv.greville()[:, None]) * X10 + kv.greville()[:, None] * C
    top = (1 - ku.greville()[:, None]) * X01 + ku.greville()[:, None] * C
    net = (
        (1 - gu) * B[None, :, :]
        + gu * right[None, :, :]
        + (1 - gv) * A[:, None, :]
        + gv * top[:, None, :]
        - ((1 - gu) * (1 - gv) * X00 + gu * (1 - gv) * X10 + (1 - gu) * gv * X01 + gu * gv * C)
    )
    # the interpolated boundaries are stored verbatim
    net[:, 0] = A
    net[0, :] = B
    free = np.ones(net.shape[:2], dtype=bool)
    free[:, 0] = False
    free[0, :] = False
    return TangentPatch(BSplinePatch(ku, kv, net), free)


def build_initial_tangent_patches(fields: TangentFieldSet) -> dict[str, TangentPatch]:
    out = {}
    for role, (f1, f2) in PATCH_FIELDS.items():
        a, b = fields[f1], fields[f2]
        if not np.array_equal(a.control[0], b.control[0]):
            raise ValueError(f"{role}: fields {f1} and {f2} are not compatible at the corner")
        out[role] = coons_tangent_patch(a, b)
    return out
