from types import SimpleNamespace

import numpy as np
import pytest

from gregsolid.domain import generate_parametric_grid
from gregsolid.errors import NumericError
from gregsolid.gregory import GregorySolid, linear_grid_map, pack_variables, unpack_variables
from gregsolid.modelio import synth_model
from gregsolid.optimize import (
    THREADS_ENV,
    AdmmState,
    Problem,
    SolverConfig,
    admm_solve,
    numeric_gradient,
    worker_count,
    x_objective,
    x_update,
    y_update,
    z_update,
)


def test_numeric_gradient_examples():
    g = numeric_gradient(lambda X: X @ X, np.array([1.0, 2.0]))
    np.testing.assert_allclose(g, [2, 4], atol=1e-6)
    np.testing.assert_allclose(numeric_gradient(lambda X: 3.0, np.ones(5)), 0, atol=1e-10)
    g = numeric_gradient(lambda X: X @ X, np.arange(6.0), coords=[1, 4], workers=2)
    np.testing.assert_allclose(g, [2, 8], atol=1e-6)


def test_numeric_gradient_names_bad_coordinate():
    def f(X):
        return np.inf if X[2] > 0 else 0.0

    with pytest.raises(NumericError, match="coordinate 2"):
        numeric_gradient(f, np.zeros(4), workers=1)


@pytest.fixture(scope="module")
def twisted():
    m = synth_model("twisted_prism", 1.2)
    s = GregorySolid.from_patches(m.domain, m.patches)
    grid = generate_parametric_grid(m.domain, 2, 2, 2)
    return s, grid, linear_grid_map(s, grid)


def test_fd_richardson_self_check(twisted):
    s, grid, gmap = twisted
    prob = Problem(gmap, SolverConfig())
    rng = np.random.default_rng(0)
    X = pack_variables(s) + 0.1 * rng.normal(size=s.n_variables)
    coords = rng.choice(s.n_variables, 20, replace=False)
    h = SolverConfig().fd_factor * prob.diag
    g1 = numeric_gradient(prob.smooth, X, h, coords)
    g2 = numeric_gradient(prob.smooth, X, h / 2, coords)
    assert np.linalg.norm(g1 - g2) <= 1e-3 * np.linalg.norm(g2)


@pytest.mark.parametrize("term", ["smooth", "positive", "sparse"])
def test_analytic_gradients_match_fd(twisted, term):
    s, grid, gmap = twisted
    prob = Problem(gmap, SolverConfig())
    rng = np.random.default_rng(1)
    X = pack_variables(s) + rng.normal(scale=4.0, size=s.n_variables)
    f = {"smooth": prob.smooth, "positive": prob.positive, "sparse": prob.sparse_l1}[term]
    grad = {"smooth": prob.smooth_grad, "positive": prob.positive_grad, "sparse": prob.sparse_grad}[term](X)
    if term == "sparse":
        assert prob.terms(X)["sparse_l0"] > 0
    coords = rng.choice(s.n_variables, 20, replace=False)
    fd = numeric_gradient(f, X, 1e-6, coords)
    assert np.linalg.norm(grad[coords] - fd) <= 1e-3 * np.linalg.norm(fd)


def frozen_problem():
    zero = lambda X: 0.0  # noqa: E731
    return SimpleNamespace(smooth=zero, smooth_grad=np.zeros_like, smooth_hess=np.zeros_like)


def random_state(n, rng, rho=1.0):
    v = [rng.normal(size=n) for _ in range(5)]
    return AdmmState(*v, rho=rho, mu=1e-5, nu=0.1, epsilon=1e-5)


def test_x_update_frozen_grid_closed_form():
    rng = np.random.default_rng(2)
    st = random_state(12, rng, rho=0.7)
    X, stalled = x_update(frozen_problem(), st, SolverConfig(inner_iters=1))
    assert not stalled
    want = (st.Y - st.UY + st.Z - st.UZ) / 2
    np.testing.assert_allclose(X, want, atol=1e-8)


def test_x_update_never_increases(twisted):
    s, grid, gmap = twisted
    prob = Problem(gmap, SolverConfig())
    rng = np.random.default_rng(3)
    for _ in range(3):
        st = random_state(s.n_variables, rng)
        X, _ = x_update(prob, st, SolverConfig())
        assert x_objective(prob, st, X) <= x_objective(prob, st, st.X)


def test_x_update_fixed_point_with_zero_gradient():
    rng = np.random.default_rng(4)
    st = random_state(6, rng)
    st.X = (st.Y - st.UY + st.Z - st.UZ) / 2
    X, stalled = x_update(frozen_problem(), st, SolverConfig())
    np.testing.assert_allclose(X, st.X, atol=1e-15)
    assert not stalled


def test_prox_points_when_weights_vanish(twisted):
    s, grid, gmap = twisted
    cfg = SolverConfig(mu=0.0, nu=0.0)
    prob = Problem(gmap, cfg)
    st = random_state(s.n_variables, np.random.default_rng(5))
    st.mu, st.nu = 0.0, 0.0
    assert np.array_equal(y_update(prob, st, cfg), st.X + st.UY)
    assert np.array_equal(z_update(prob, st, cfg), st.X + st.UZ)


def subproblem_values(prob, st):
    def fy(Y):
        d = st.X - Y + st.UY
        return st.mu * prob.positive(Y) + 0.5 * st.rho * d @ d

    def fz(Z):
        d = st.X - Z + st.UZ
        return st.nu * prob.sparse_l1(Z) + 0.5 * st.rho * d @ d

    return fy, fz


def test_subgradient_updates_keep_best_iterate(twisted):
    s, grid, gmap = twisted
    cfg = SolverConfig()
    prob = Problem(gmap, cfg)
    rng = np.random.default_rng(6)
    X0 = pack_variables(s)
    st = AdmmState.initial(X0, cfg)
    st.X = X0 + rng.normal(scale=3.0, size=X0.size)
    st.Y = X0 + rng.normal(scale=3.0, size=X0.size)
    st.Z = X0 + rng.normal(scale=3.0, size=X0.size)
    fy, fz = subproblem_values(prob, st)
    assert fy(y_update(prob, st, cfg)) <= fy(st.Y)
    assert fz(z_update(prob, st, cfg)) <= fz(st.Z)


def test_small_weights_stay_near_prox(twisted):
    s, grid, gmap = twisted
    cfg = SolverConfig(mu=1e-9)
    prob = Problem(gmap, cfg)
    X0 = pack_variables(s)
    assert prob.jacobians(X0).min() >= 0.5
    st = AdmmState.initial(X0, cfg)
    st.mu = 1e-9
    assert np.abs(y_update(prob, st, cfg) - X0).max() <= 1e-3
    # all-positive grid: the l1 term vanishes locally
    np.testing.assert_allclose(z_update(prob, st, cfg), X0 + st.UZ, atol=1e-8)


def test_identity_cube_is_near_fixed_point():
    m = synth_model("cube")
    s = GregorySolid.from_patches(m.domain, m.patches)
    grid = generate_parametric_grid(m.domain, 2, 2, 2)
    r = admm_solve(s, grid)
    assert r.final["sparse_l0"] == 0
    assert r.final["objective"] <= r.initial["objective"] + 1e-9
    assert abs(r.final["objective"] - r.initial["objective"]) <= 1e-4 * r.initial["objective"]
    assert 1 <= len(r.history) <= SolverConfig().max_outer
    for h in r.history:
        assert {"primal_residual", "dual_residual", "sparse_l0", "objective"} <= set(h)


def test_dual_update_identity(twisted, monkeypatch):
    """The last dual step equals rho (X - Y) and rho (X - Z) to roundoff."""
    import gregsolid.optimize as opt

    s, grid, gmap = twisted
    snaps = []
    real_z = opt.z_update

    def spy(problem, state, cfg):
        snaps.append((state.X.copy(), state.UY.copy(), state.UZ.copy(), state))
        return real_z(problem, state, cfg)

    monkeypatch.setattr(opt, "z_update", spy)
    X = pack_variables(s) + np.random.default_rng(7).normal(scale=3.0, size=s.n_variables)
    opt.admm_solve(unpack_variables(s, X), grid, SolverConfig(max_outer=3))
    Xk, UYk, UZk, state = snaps[-1]
    np.testing.assert_allclose(state.UY - UYk, state.rho * (Xk - state.Y), atol=1e-12)
    np.testing.assert_allclose(state.UZ - UZk, state.rho * (Xk - state.Z), atol=1e-12)


def test_perturbed_start_reduces_negatives():
    m = synth_model("twisted_prism", 1.2)
    s = GregorySolid.from_patches(m.domain, m.patches)
    grid = generate_parametric_grid(m.domain, 3, 3, 3)
    X = pack_variables(s) + np.random.default_rng(1).normal(scale=6.0, size=s.n_variables)
    r = admm_solve(unpack_variables(s, X), grid, SolverConfig(max_outer=20))
    assert r.initial["sparse_l0"] > 0
    assert r.final["sparse_l0"] < r.initial["sparse_l0"]
    assert r.final["objective"] <= r.initial["objective"] + 1e-9
    assert len(r.history) <= 20


def test_solver_config_defaults_and_validation():
    cfg = SolverConfig()
    assert (cfg.mu, cfg.nu, cfg.rho, cfg.epsilon) == (1e-5, 0.1, 1.0, 1e-5)
    assert (cfg.max_outer, cfg.inner_iters, cfg.sub_iters) == (50, 15, 25)
    for bad in ({"rho": 0}, {"epsilon": -1}, {"mu": -1}, {"backtrack": 1.0}, {"max_outer": 0}):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


def test_admm_state_validation():
    with pytest.raises(ValueError):
        AdmmState(np.zeros(3), np.zeros(3), np.zeros(2), np.zeros(3), np.zeros(3), 1.0, 0, 0, 1e-5)
    with pytest.raises(ValueError):
        AdmmState(*(np.zeros(3) for _ in range(5)), rho=0.0, mu=0, nu=0, epsilon=1e-5)


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert worker_count() == 3
    monkeypatch.setenv(THREADS_ENV, "0")
    assert worker_count() >= 1
    monkeypatch.delenv(THREADS_ENV)
    assert worker_count() >= 1
    for bad in ("x", "-2"):
        monkeypatch.setenv(THREADS_ENV, bad)
        with pytest.raises(ValueError):
            worker_count()
