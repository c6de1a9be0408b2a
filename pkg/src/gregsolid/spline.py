"""Tensor-product B-spline kernel.

Clamped knot vectors on [0, 1], curve and patch evaluation with partial
derivatives, degree elevation and least-squares curve fitting. Everything is
vectorized over parameter arrays; the evaluators return one row per query.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FittingError

_PARAM_TOL = 1e-12


@dataclass(frozen=True)
class KnotVector:
    degree: int
    knots: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        p = int(self.degree)
        if p < 0:
            raise ValueError("degree must be non-negative")
        if knots.ndim != 1 or knots.size < 2 * (p + 1):
            raise ValueError(f"need at least {2 * (p + 1)} knots for degree {p}")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be non-decreasing")
        if not (np.all(knots[: p + 1] == 0.0) and np.all(knots[-p - 1 :] == 1.0)):
            raise ValueError("knot vector must be clamped on [0, 1]")
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "degree", p)

    @classmethod
    def uniform(cls, degree: int, n_ctrl: int) -> KnotVector:
        """Clamped knot vector with evenly spaced interior knots."""
        n_inner = n_ctrl - degree - 1
        if n_inner < 0:
            raise ValueError("n_ctrl must exceed degree")
        inner = np.linspace(0.0, 1.0, n_inner + 2)[1:-1]
        return cls(degree, np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)]))

    @property
    def n_ctrl(self) -> int:
        return self.knots.size - self.degree - 1

    def greville(self) -> np.ndarray:
        p = self.degree
        if p == 0:
            return 0.5 * (self.knots[:-1] + self.knots[1:])
        k = self.knots
        return np.array([k[i + 1 : i + p + 1].mean() for i in range(self.n_ctrl)])

    def basis(self, t, order: int = 0) -> np.ndarray:
        """Matrix of basis-function derivatives, shape ``(len(t), n_ctrl)``."""
        t = _check_params(t)
        return _basis_derivs(self.knots, self.degree, t, order)

    def derivative(self) -> KnotVector:
        """Knot vector of the derivative space (ends trimmed)."""
        if self.degree == 0:
            raise ValueError("cannot differentiate a degree-0 space")
        return KnotVector(self.degree - 1, self.knots[1:-1])


def _check_params(t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(~np.isfinite(t)) or np.any(t < -_PARAM_TOL) or np.any(t > 1.0 + _PARAM_TOL):
        raise DomainError(f"parameter outside [0, 1]: {t[(t < 0) | (t > 1) | ~np.isfinite(t)][:5]}")
    return np.clip(t, 0.0, 1.0)


def _basis0(knots: np.ndarray, t: np.ndarray) -> np.ndarray:
    n = knots.size - 1
    lo, hi = knots[:-1], knots[1:]
    N = ((t[:, None] >= lo[None, :]) & (t[:, None] < hi[None, :])).astype(float)
    # t == 1 belongs to the last non-empty span
    last = np.nonzero(hi > lo)[0][-1]
    at_end = t >= knots[-1]
    if np.any(at_end):
        N[at_end] = 0.0
        N[at_end, last] = 1.0
    assert N.shape[1] == n
    return N


def _ratio(num, den):
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den != 0)
    return out


def _basis_all(knots: np.ndarray, p: int, t: np.ndarray) -> np.ndarray:
    """Cox-de Boor: all degree-p functions at the parameters ``t``."""
    N = _basis0(knots, t)
    for d in range(1, p + 1):
        m = knots.size - d - 1
        k_i = knots[:m]
        k_id = knots[d : d + m]
        k_i1 = knots[1 : 1 + m]
        k_id1 = knots[d + 1 : d + 1 + m]
        left = _ratio(t[:, None] - k_i[None, :], np.broadcast_to(k_id - k_i, (t.size, m)))
        right = _ratio(k_id1[None, :] - t[:, None], np.broadcast_to(k_id1 - k_i1, (t.size, m)))
        N = left * N[:, :m] + right * N[:, 1 : m + 1]
    return N


def _basis_derivs(knots: np.ndarray, p: int, t: np.ndarray, order: int) -> np.ndarray:
    if order < 0:
        raise ValueError("derivative order must be non-negative")
    if order > p:
        return np.zeros((t.size, knots.size - p - 1))
    if order == 0:
        return _basis_all(knots, p, t)
    lower = _basis_derivs(knots, p - 1, t, order - 1)
    m = knots.size - p - 1
    a = _ratio(np.full(m, float(p)), knots[p : p + m] - knots[:m])
    b = _ratio(np.full(m, float(p)), knots[p + 1 : p + 1 + m] - knots[1 : 1 + m])
    # lower has m + 1 columns
    return a[None, :] * lower[:, :m] - b[None, :] * lower[:, 1 : m + 1]


@dataclass(frozen=True)
class BSplineCurve:
    knots: KnotVector
    control: np.ndarray

    def __post_init__(self):
        control = np.array(self.control, dtype=float)
        if control.ndim != 2 or control.shape[0] != self.knots.n_ctrl:
            raise ValueError(
                f"expected {self.knots.n_ctrl} control points, got shape {control.shape}"
            )
        control.setflags(write=False)
        object.__setattr__(self, "control", control)

    @property
    def degree(self) -> int:
        return self.knots.degree

    def __call__(self, t, order: int = 0) -> np.ndarray:
        return eval_curve(self, t, order)

    def derivative(self) -> BSplineCurve:
        """Derivative curve obtained by differencing control points."""
        p = self.degree
        k = self.knots.knots
        P = self.control
        den = k[p + 1 : p + P.shape[0]] - k[1 : P.shape[0]]
        Q = p * _ratio(np.diff(P, axis=0), np.broadcast_to(den[:, None], (den.size, P.shape[1])))
        return BSplineCurve(self.knots.derivative(), Q)


@dataclass(frozen=True)
class BSplinePatch:
    knots_u: KnotVector
    knots_v: KnotVector
    control: np.ndarray

    def __post_init__(self):
        control = np.array(self.control, dtype=float)
        want = (self.knots_u.n_ctrl, self.knots_v.n_ctrl)
        if control.ndim != 3 or control.shape[:2] != want:
            raise ValueError(f"control net shape {control.shape} does not match knots {want}")
        control.setflags(write=False)
        object.__setattr__(self, "control", control)

    @property
    def degrees(self) -> tuple[int, int]:
        return self.knots_u.degree, self.knots_v.degree

    def __call__(self, a, b, order_a: int = 0, order_b: int = 0) -> np.ndarray:
        return eval_patch(self, a, b, order_a, order_b)

    def with_control(self, control) -> BSplinePatch:
        return BSplinePatch(self.knots_u, self.knots_v, control)


def eval_curve(c: BSplineCurve, t, order: int = 0) -> np.ndarray:
    """Evaluate the ``order``-th derivative of a curve.

    A scalar ``t`` yields a single point; an array yields one row per value.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    scalar = np.ndim(t) == 0
    out = c.knots.basis(t, order) @ c.control
    return out[0] if scalar else out


def eval_patch(s: BSplinePatch, a, b, order_a: int = 0, order_b: int = 0) -> np.ndarray:
    """Evaluate a partial derivative of a tensor patch at paired parameters."""
    if order_a < 0 or order_b < 0 or order_a + order_b > 2:
        raise ValueError("need order_a + order_b <= 2")
    scalar = np.ndim(a) == 0 and np.ndim(b) == 0
    a, b = np.broadcast_arrays(np.atleast_1d(a), np.atleast_1d(b))
    Na = s.knots_u.basis(a.ravel(), order_a)
    Nb = s.knots_v.basis(b.ravel(), order_b)
    out = np.einsum("mi,mj,ijk->mk", Na, Nb, s.control)
    return out[0] if scalar else out


def patch_coefficients(s_knots: tuple[KnotVector, KnotVector], a, b, order_a=0, order_b=0):
    """Per-query weights on the flattened control net (row-major ``i, j``).

    ``eval_patch(s, a, b, ...) == patch_coefficients(...) @ control.reshape(-1, 3)``.
    """
    ku, kv = s_knots
    a, b = np.broadcast_arrays(np.atleast_1d(a), np.atleast_1d(b))
    Na = ku.basis(a.ravel(), order_a)
    Nb = kv.basis(b.ravel(), order_b)
    return (Na[:, :, None] * Nb[:, None, :]).reshape(Na.shape[0], -1)


def _elevated_knots(kv: KnotVector, target: int) -> KnotVector:
    if target < kv.degree:
        raise ValueError(f"target degree {target} below current degree {kv.degree}")
    inc = target - kv.degree
    values, counts = np.unique(kv.knots, return_counts=True)
    counts = counts + inc
    return KnotVector(target, np.repeat(values, counts))


def _elevate_axis(kv: KnotVector, control: np.ndarray, target: int, axis: int):
    if target == kv.degree:
        return kv, control
    new = _elevated_knots(kv, target)
    g = new.greville()
    # the old curve lies in the new space, so interpolation at the Greville
    # abscissae recovers it exactly
    moved = np.moveaxis(control, axis, 0)
    rhs = kv.basis(g) @ moved.reshape(kv.n_ctrl, -1)
    sol = np.linalg.solve(new.basis(g), rhs)
    return new, np.moveaxis(sol.reshape((new.n_ctrl,) + moved.shape[1:]), 0, axis)


def degree_elevate(s: BSplinePatch, target_u: int, target_v: int) -> BSplinePatch:
    """Raise patch degrees without changing its shape."""
    ku, ctrl = _elevate_axis(s.knots_u, s.control, target_u, 0)
    kv, ctrl = _elevate_axis(s.knots_v, ctrl, target_v, 1)
    return BSplinePatch(ku, kv, ctrl)


def degree_elevate_curve(c: BSplineCurve, target: int) -> BSplineCurve:
    kv, ctrl = _elevate_axis(c.knots, c.control, target, 0)
    return BSplineCurve(kv, ctrl)


def fit_curve_lsq(samples, degree: int, n_ctrl: int) -> BSplineCurve:
    """Least-squares fit of a clamped uniform spline to ``(t, value)`` samples.

    ``samples`` is either a sequence of ``(t, point)`` pairs or a tuple
    ``(t_array, value_array)``.
    """
    t, values = _split_samples(samples)
    if t.size < n_ctrl:
        raise FittingError(f"{t.size} samples cannot determine {n_ctrl} control points")
    if np.unique(t).size != t.size:
        raise FittingError("sample parameters must be distinct")
    kv = KnotVector.uniform(degree, n_ctrl)
    A = kv.basis(t)
    sv = np.linalg.svd(A, compute_uv=False)
    cond = np.inf if sv[-1] == 0 else sv[0] / sv[-1]
    if sv[-1] <= sv[0] * 1e-12:
        raise FittingError(f"rank-deficient fitting matrix (condition number {cond:.3e})")
    ctrl, *_ = np.linalg.lstsq(A, values, rcond=None)
    return BSplineCurve(kv, ctrl)


def _split_samples(samples):
    if isinstance(samples, tuple) and len(samples) == 2 and np.ndim(samples[0]) == 1 and np.ndim(samples[1]) == 2:
        t, values = samples
    else:
        t = np.array([s[0] for s in samples], dtype=float)
        values = np.array([s[1] for s in samples], dtype=float)
    t = _check_params(t)
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] != t.size:
        raise FittingError("sample values must be an (n, d) array matching the parameters")
    return t, values
