"""Acceptance criteria, one test per criterion.

Each test records a ``criterion`` property; ``conftest.py`` prints one
PASS/FAIL line per criterion at the end of the run. Run on its own with
``pytest tests/test_acceptance.py -v``.
"""

import time

import numpy as np
import pytest

from gregsolid.domain import SHAPES, build_domain, corner_coordinates, corner_weights, generate_parametric_grid
from gregsolid.gregory import GregorySolid, eval_solid, linear_grid_map, map_grid, pack_variables, unpack_variables
from gregsolid.modelio import synth_model
from gregsolid.optimize import Problem, SolverConfig, admm_solve, numeric_gradient, x_objective, AdmmState
from gregsolid.quality import JacobianVector, jacobian_values, jacobian_vector, negative_volume_ratio

from test_gregory import F_w, make_analytic_corner
from test_quality import UNIT, oracle_jacobians

CORPUS = [
    ("cube", 0.0),
    ("twisted_prism", 0.0),
    ("twisted_prism", 0.6),
    ("twisted_prism", 1.2),
    ("bulged_pentaprism", 0.0),
    ("bulged_pentaprism", 0.3),
]

# regression constants measured on the reference run (6^3 grid, default weights)
TWISTED_INITIAL_L0 = 0
TWISTED_FINAL_L0 = 0
# same model, tangent controls perturbed by N(0, 6^2) noise (seed 1)
PERTURBED_INITIAL_L0 = 619
PERTURBED_FINAL_L0 = 6


def report(record_property, n, title, ok, detail):
    record_property("criterion", f"{n:2d}. {title}")
    record_property("outcome", "PASS" if ok else "FAIL")
    record_property("detail", detail)


def bbox_diagonal(patches):
    pts = np.concatenate([p.sample_points() for p in patches])
    return float(np.linalg.norm(np.ptp(pts, axis=0)))


def test_criterion_01_boundary_interpolation(record_property):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for kind, mag in CORPUS:
        m = synth_model(kind, mag)
        s = GregorySolid.from_patches(m.domain, m.patches)
        d, diag = m.domain, bbox_diagonal(m.patches)
        for f in range(d.n_faces):
            q = rng.dirichlet(np.ones(len(d.faces[f])), 500) @ d.corners[list(d.faces[f])]
            err = np.linalg.norm(eval_solid(s, q) - m.patches[f](q), axis=-1).max() / diag
            worst = max(worst, err)
    secs = time.perf_counter() - t0
    ok = worst <= 1e-6 and secs < 30
    report(record_property, 1, "boundary interpolation", ok, f"max error {worst:.2e} x diag, {secs:.1f} s")
    assert worst <= 1e-6
    assert secs < 30


def test_criterion_02_corner_identities(record_property):
    analytic_corner = make_analytic_corner()
    rng = np.random.default_rng(2)
    worst = 0.0
    for kind, mag in CORPUS:
        m = synth_model(kind, mag)
        s = GregorySolid.from_patches(m.domain, m.patches)
        for g in s.interpolators:
            a, b = rng.random((2, 100))
            z = np.zeros_like(a)
            v = g.views
            for got, want in ((g(a, b, z), v["top"](a, b)), (g(a, z, b), v["lft"](a, b)), (g(z, a, b), v["rgt"](a, b))):
                worst = max(worst, np.abs(got - want).max())
    # derivative identity on a corner with exactly consistent tangent data
    a, b = 0.05 + 0.9 * rng.random((2, 100))
    z = np.zeros_like(a)
    h = 1e-6
    fd = (analytic_corner(a, b, z + h) - analytic_corner(a, b, z)) / h
    want = analytic_corner.tangents["top"].patch(a, b)
    np.testing.assert_allclose(want, F_w(a, b), atol=1e-12)
    rel = float((np.linalg.norm(fd - want, axis=-1) / np.linalg.norm(want, axis=-1)).max())
    ok = worst <= 1e-9 and rel <= 1e-4
    report(record_property, 2, "corner-interpolator identities", ok, f"face identities {worst:.1e}, dR/dw vs T_top rel {rel:.1e}")
    assert worst <= 1e-9
    assert rel <= 1e-4


def bullet_cases(d, rng):
    """``(corner, points, expected)`` for the ten cases; NaN marks a free coordinate."""
    c = d.corners
    nan = np.nan
    for l in range(d.n_corners):
        j, k, i = d.frames[l]
        top, lft, rgt = d.corner_faces[l]
        t = rng.random((20, 1))
        yield l, c[l][None], [0, 0, 0]
        yield l, c[j][None], [1, 0, 0]
        yield l, c[k][None], [0, 1, 0]
        yield l, c[i][None], [0, 0, 1]
        yield l, c[l] + t * (c[j] - c[l]), [nan, 0, 0]
        yield l, c[l] + t * (c[k] - c[l]), [0, nan, 0]
        yield l, c[l] + t * (c[i] - c[l]), [0, 0, nan]
        for face, want in ((rgt, [0, nan, nan]), (lft, [nan, 0, nan]), (top, [nan, nan, 0])):
            fv = c[list(d.faces[face])]
            yield l, rng.dirichlet(np.ones(len(fv)), 20) @ fv, want


def test_criterion_03_coordinate_bullets(record_property):
    rng = np.random.default_rng(3)
    worst = 0.0
    count = 0
    for shape in SHAPES:
        d = build_domain(shape)
        for l, p, want in bullet_cases(d, rng):
            got = corner_coordinates(d, l, p)
            want = np.broadcast_to(np.asarray(want, float), got.shape)
            sel = ~np.isnan(want)
            worst = max(worst, float(np.abs(got[sel] - want[sel]).max()))
            count += 1
    ok = worst <= 1e-12
    report(record_property, 3, "corner-coordinate bullet cases", ok, f"{count} cases on {len(SHAPES)} domains, max error {worst:.1e}")
    assert worst <= 1e-12


def test_criterion_04_partition_of_unity(record_property):
    rng = np.random.default_rng(4)
    worst = 0.0
    for shape in SHAPES:
        d = build_domain(shape)
        p = rng.dirichlet(np.ones(d.n_corners), 1000) @ d.corners
        worst = max(worst, float(np.abs(corner_weights(d, p).sum(axis=1) - 1).max()))
    ok = worst <= 1e-12
    report(record_property, 4, "partition of unity", ok, f"max |sum W - 1| = {worst:.1e}")
    assert worst <= 1e-12


def test_criterion_05_identity_cube_regularity(record_property):
    t0 = time.perf_counter()
    m = synth_model("cube")
    s = GregorySolid.from_patches(m.domain, m.patches)
    mesh = map_grid(s, generate_parametric_grid(m.domain, 8, 8, 8))
    J = jacobian_vector(mesh).values
    secs = time.perf_counter() - t0
    ok = J.min() > 0 and J.mean() >= 0.8 and secs < 60
    report(record_property, 5, "identity-cube regularity", ok, f"{J.size} Jacobians, min {J.min():.4f}, mean {J.mean():.4f}, {secs:.1f} s")
    assert J.min() > 0
    assert J.mean() >= 0.8
    assert secs < 60


def test_criterion_06_optimization_efficacy(record_property):
    t0 = time.perf_counter()
    cfg = SolverConfig(mu=1e-5, nu=0.1, rho=1.0, epsilon=1e-5, max_outer=50)
    m = synth_model("twisted_prism", 1.2)
    s = GregorySolid.from_patches(m.domain, m.patches)
    grid = generate_parametric_grid(m.domain, 6, 6, 6)
    gmap = linear_grid_map(s, grid)
    r = admm_solve(s, grid, cfg, gmap)
    X = pack_variables(s)
    noisy = unpack_variables(s, X + np.random.default_rng(1).normal(scale=6.0, size=X.size))
    rp = admm_solve(noisy, grid, cfg)
    secs = time.perf_counter() - t0
    counts = (r.initial["sparse_l0"], r.final["sparse_l0"], rp.initial["sparse_l0"], rp.final["sparse_l0"])
    ok = (
        r.final["sparse_l0"] <= r.initial["sparse_l0"]
        and r.final["objective"] <= r.initial["objective"] + 1e-9
        and rp.final["sparse_l0"] <= rp.initial["sparse_l0"]
        and rp.final["objective"] <= rp.initial["objective"] + 1e-9
        and secs < 600
    )
    detail = "l0 {}->{} (perturbed start {}->{}), {:.0f} s".format(*counts, secs)
    report(record_property, 6, "optimization efficacy", ok, detail)
    assert r.final["sparse_l0"] <= r.initial["sparse_l0"]
    assert r.final["objective"] <= r.initial["objective"] + 1e-9
    assert rp.final["sparse_l0"] <= rp.initial["sparse_l0"]
    assert rp.final["objective"] <= rp.initial["objective"] + 1e-9
    assert len(r.history) <= 50 and len(rp.history) <= 50
    assert secs < 600
    # regression constants; the perturbed final count may drift slightly with BLAS roundoff
    assert r.initial["sparse_l0"] == TWISTED_INITIAL_L0
    assert r.final["sparse_l0"] == TWISTED_FINAL_L0
    assert rp.initial["sparse_l0"] == PERTURBED_INITIAL_L0
    assert rp.final["sparse_l0"] <= 2 * PERTURBED_FINAL_L0


@pytest.mark.xfail(strict=True, reason="the linear twist of 1.2 rad leaves every initial Jacobian positive")
def test_twisted_prism_initially_has_negative_jacobians():
    m = synth_model("twisted_prism", 1.2)
    s = GregorySolid.from_patches(m.domain, m.patches)
    mesh = map_grid(s, generate_parametric_grid(m.domain, 6, 6, 6))
    assert (jacobian_vector(mesh).values < 0).sum() > 0


def test_criterion_07_gradient_correctness(record_property):
    m = synth_model("twisted_prism", 1.2)
    s = GregorySolid.from_patches(m.domain, m.patches)
    grid = generate_parametric_grid(m.domain, 3, 3, 3)
    cfg = SolverConfig()
    prob = Problem(linear_grid_map(s, grid), cfg)
    rng = np.random.default_rng(7)
    X0 = pack_variables(s)
    st = AdmmState.initial(X0, cfg)
    st.Y = X0 + rng.normal(scale=0.5, size=X0.size)
    st.Z = X0 + rng.normal(scale=0.5, size=X0.size)
    X = X0 + rng.normal(scale=0.5, size=X0.size)
    coords = rng.choice(X.size, 20, replace=False)
    h = cfg.fd_factor * prob.diag
    f = lambda Y: x_objective(prob, st, Y)  # noqa: E731
    g1 = numeric_gradient(f, X, h, coords)
    g2 = numeric_gradient(f, X, h / 2, coords)
    rel = float(np.linalg.norm(g1 - g2) / np.linalg.norm(g2))
    report(record_property, 7, "gradient correctness (h vs h/2)", rel <= 1e-3, f"relative difference {rel:.1e} on 20 coordinates")
    assert rel <= 1e-3


def test_criterion_08_jacobian_oracle(record_property):
    rng = np.random.default_rng(8)
    cells = UNIT[None] + 0.3 * rng.normal(size=(1000, 8, 3))
    J, _ = jacobian_values(cells.reshape(-1, 3), np.arange(8000).reshape(1000, 8))
    err = float(np.abs(J - np.array([oracle_jacobians(c) for c in cells])).max())
    # cells of volume 1, 8 and 1 with the last one inverted: ratio 1/10
    pts = np.concatenate([UNIT, 2 * UNIT + [5, 0, 0], UNIT * [-1, 1, 1] - [5, 0, 0]])
    conn = np.arange(24).reshape(3, 8)
    from types import SimpleNamespace

    jv = JacobianVector(jacobian_values(pts, conn)[0].ravel(), np.zeros(3, bool))
    ratio = negative_volume_ratio(SimpleNamespace(points=pts, cells=conn), jv)
    ok = err <= 1e-12 and abs(ratio - 0.1) <= 1e-9
    report(record_property, 8, "Jacobian oracle", ok, f"max deviation {err:.1e}, volume ratio {ratio!r}")
    assert err <= 1e-12
    assert abs(ratio - 0.1) <= 1e-9


def test_criterion_09_conformity(record_property):
    dup = 0
    for shape in SHAPES:
        d = build_domain(shape)
        for n in (1, 2, 5):
            g = generate_parametric_grid(d, n, n, n)
            _, counts = np.unique(g.points, axis=0, return_counts=True)
            dup += int((counts > 1).sum())
            # every shared block face uses the same global vertices on both sides
            faces = {}
            for b in range(g.block_ids.shape[0]):
                ids = g.block_ids[b]
                for sl in (ids[0], ids[-1], ids[:, 0], ids[:, -1], ids[:, :, 0], ids[:, :, -1]):
                    faces.setdefault(frozenset(map(tuple, g.points[sl].round(9).reshape(-1, 3))), []).append(np.sort(sl.ravel()))
            for sides in faces.values():
                for other in sides[1:]:
                    dup += int(not np.array_equal(sides[0], other))
    report(record_property, 9, "grid conformity", dup == 0, f"{dup} duplicated vertices over {len(SHAPES)} domains x M in (1, 2, 5)")
    assert dup == 0


def test_criterion_10_default_provenance(record_property):
    cfg = SolverConfig()
    ok = cfg.epsilon == 1e-5 and cfg.rho == 1.0
    report(record_property, 10, "solver defaults", ok, f"epsilon={cfg.epsilon!r}, rho={cfg.rho!r}, mu={cfg.mu!r}, nu={cfg.nu!r}")
    assert cfg.epsilon == 1e-5
    assert cfg.rho == 1.0
