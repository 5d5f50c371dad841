import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize, minimize_scalar

from oracles import grid_minimize_l1_ls
from wavereg.errors import ConfigurationError, DimensionError, NonConvergenceError
from wavereg.model import DataShard, LossModel, loss_arrays
from wavereg.solver import (
    AdmmConfig,
    ShardObjective,
    SolverState,
    admm,
    admm_alpha_update,
    admm_theta_update,
    lambda_max,
    make_objective,
    penalized_objective,
    soft_threshold,
    solve_weighted_l1,
)

LS = LossModel.least_squares()


def kkt_violation(shard, model, lam, weights, beta):
    _, d1, _ = loss_arrays(model, shard.y, shard.x @ beta)
    g = shard.x.T @ d1 / shard.n
    nz = beta != 0
    viol = np.zeros_like(beta)
    viol[nz] = np.abs(g[nz] + lam * weights[nz] * np.sign(beta[nz]))
    viol[~nz] = np.maximum(np.abs(g[~nz]) - lam * weights[~nz], 0.0)
    return float(viol.max())


def random_instance(rng, family, n=None, p=None):
    n = n or int(rng.integers(40, 120))
    p = p or int(rng.integers(2, 8))
    x = rng.standard_normal((n, p))
    beta = rng.normal(0, 0.7, p) * (rng.random(p) < 0.6)
    z = x @ beta
    if family == "least_squares":
        y = z + rng.standard_normal(n)
        model = LS
    elif family == "huber":
        y = z + rng.standard_t(3, n)
        model = LossModel.huber(1.345)
    elif family == "logistic":
        y = (rng.random(n) < 1 / (1 + np.exp(-z))).astype(float)
        model = LossModel.logistic()
    else:
        y = rng.poisson(np.exp(np.clip(z, -5, 3))).astype(float)
        model = LossModel.poisson()
    shard = DataShard(0, x, y)
    w = rng.uniform(0.3, 3.0, p)
    lam = float(rng.uniform(0.02, 0.6) * lambda_max(make_objective(shard, model), w))
    return shard, model, lam, w


def test_soft_threshold_examples():
    assert soft_threshold(0.5, 0.2) == pytest.approx(0.3)
    assert soft_threshold(-0.1, 0.2) == 0.0
    for x in (-3.2, 0.0, 7.1):
        assert soft_threshold(x, 0.0) == x
    with pytest.raises(ValueError):
        soft_threshold(1.0, -1.0)


def test_soft_threshold_zero_has_positive_sign():
    out = soft_threshold(np.array([-0.1, 0.1]), 0.5)
    assert np.all(np.signbit(out) == False)  # noqa: E712


def _state(alpha, dual, theta=None):
    alpha = np.asarray(alpha, float)
    theta = np.zeros_like(alpha) if theta is None else np.asarray(theta, float)
    return SolverState(alpha, theta, np.asarray(dual, float))


def test_theta_update_example_against_scalar_minimisation():
    st_ = _state([1.0, 0.0], [0.0, 0.0])
    theta = admm_theta_update(st_, 0.4, AdmmConfig(eta=1.0))
    np.testing.assert_allclose(theta, [0.6, 0.0], atol=1e-12)
    # step-2 objective -a(alpha-theta) + eta^2/2 (alpha-theta)^2 + lam|theta|, coordinate 0
    ref = minimize_scalar(lambda t: 0.5 * (1.0 - t) ** 2 + 0.4 * abs(t), bounds=(-2, 2),
                          method="bounded", options={"xatol": 1e-10}).x
    assert theta[0] == pytest.approx(ref, abs=1e-6)


def test_theta_update_identities():
    cfg = AdmmConfig(eta=2.0)
    alpha = np.array([1.0, -2.0, 0.3])
    dual = np.array([0.4, 1.0, -0.8])
    np.testing.assert_array_equal(admm_theta_update(_state(alpha, dual), 0.0, cfg), alpha - dual / 4)
    out = admm_theta_update(_state(dual / 4, dual), 0.7, cfg)
    np.testing.assert_array_equal(out, np.zeros(3))


def test_alpha_update_identity_design():
    # minimiser of (1/2)(1/2)sum (y_i - a_i)^2 + (1/2)|a|^2 is y/3
    shard = DataShard(0, np.eye(2), [2.0, 4.0])
    alpha = admm_alpha_update(shard, LS, [1.0, 1.0], _state([0.0, 0.0], [0.0, 0.0]), AdmmConfig())
    np.testing.assert_allclose(alpha, [2 / 3, 4 / 3], atol=1e-12)


@pytest.mark.parametrize("family", ["logistic", "poisson", "huber"])
def test_alpha_update_matches_numerical_minimiser(family):
    rng = np.random.default_rng(7)
    shard, model, _, w = random_instance(rng, family, n=60, p=4)
    theta = rng.normal(0, 0.3, 4)
    dual = rng.normal(0, 0.1, 4)
    cfg = AdmmConfig(eta=1.3, newton_tol=1e-10, max_newton_iter=50)
    alpha = admm_alpha_update(shard, model, w, _state(np.zeros(4), dual, theta), cfg)
    obj = ShardObjective(shard, model)

    def step1(a):
        d = a - theta
        return obj.value(a / w) - dual @ d + 0.5 * cfg.eta**2 * d @ d

    ref = minimize(step1, np.zeros(4), method="BFGS", options={"gtol": 1e-10}).x
    np.testing.assert_allclose(alpha, ref, atol=1e-5)


def test_alpha_update_fixed_point():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((30, 3))
    shard = DataShard(0, x, rng.standard_normal(30))
    obj = make_objective(shard, LS)
    # stationary point with theta = alpha, dual = gradient (w = 1)
    alpha0 = np.array([0.2, -0.5, 1.0])
    dual = obj.gradient(alpha0)
    cfg = AdmmConfig()
    alpha = admm_alpha_update(shard, LS, np.ones(3), _state(alpha0, dual, alpha0), cfg)
    assert np.max(np.abs(alpha - alpha0)) < cfg.newton_tol


def test_alpha_update_huber_linear_zone_terminates():
    x = np.ones((5, 1))
    y = np.array([50.0, 60.0, 70.0, 80.0, 90.0])
    shard = DataShard(0, x, y)
    cfg = AdmmConfig(curvature_floor=1e-4)
    alpha = admm_alpha_update(shard, LossModel.huber(1.0), [1.0], _state([0.0], [0.0]), cfg)
    assert np.all(np.isfinite(alpha))


def test_large_lambda_gives_zero():
    rng = np.random.default_rng(11)
    shard, model, _, w = random_instance(rng, "least_squares", n=50, p=5)
    obj = make_objective(shard, model)
    lam = 1.01 * lambda_max(obj, w)
    beta = solve_weighted_l1(shard, model, lam, w)
    assert np.all(beta == 0)
    f0 = penalized_objective(obj, lam, w, np.zeros(5))
    for probe in rng.normal(0, 0.5, (200, 5)):
        assert f0 <= penalized_objective(obj, lam, w, probe)


def test_zero_lambda_is_ols():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((80, 4))
    y = x @ [1.0, -2.0, 0.5, 0.0] + rng.standard_normal(80)
    beta = solve_weighted_l1(DataShard(0, x, y), LS, 0.0, np.ones(4), AdmmConfig(primal_tol=1e-10, dual_tol=1e-10))
    ols = np.linalg.solve(x.T @ x, x.T @ y)
    np.testing.assert_allclose(beta, ols, atol=1e-6)


def test_p2_matches_grid_search():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((25, 2))
    y = x @ [1.5, -0.4] + 0.5 * rng.standard_normal(25)
    w = np.array([1.0, 2.0])
    beta = solve_weighted_l1(DataShard(0, x, y), LS, 0.1, w)
    ref = grid_minimize_l1_ls(x, y, 0.1, w)
    np.testing.assert_allclose(beta, ref, atol=2e-3)


@pytest.mark.parametrize("family", ["least_squares", "huber", "logistic", "poisson"])
def test_kkt_random(family):
    rng = np.random.default_rng(abs(hash(family)) % 2**32)
    for _ in range(10):
        shard, model, lam, w = random_instance(rng, family)
        beta = solve_weighted_l1(shard, model, lam, w)
        assert kkt_violation(shard, model, lam, w, beta) <= 1e-3


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(0.05, 20.0))
def test_weight_equivariance(seed, c):
    rng = np.random.default_rng(seed)
    shard, model, lam, w = random_instance(rng, "least_squares")
    cfg = AdmmConfig(primal_tol=1e-11, dual_tol=1e-11)
    b1 = solve_weighted_l1(shard, model, lam, w, cfg)
    b2 = solve_weighted_l1(shard, model, lam / c, c * w, cfg)
    np.testing.assert_allclose(b1, b2, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_zeros_are_exact_and_residual_small(seed):
    rng = np.random.default_rng(seed)
    shard, model, lam, w = random_instance(rng, "logistic")
    cfg = AdmmConfig()
    beta, state = admm(make_objective(shard, model), lam, w, cfg)
    assert state.primal_residual_norm <= cfg.primal_tol
    zeros = state.theta == 0
    assert np.all(beta[zeros] == 0.0)
    assert not np.any(np.signbit(beta[zeros]))
    assert state.primal_residual_norm == pytest.approx(np.linalg.norm(state.alpha - state.theta))


def test_nonconvergence_raises():
    rng = np.random.default_rng(1)
    shard, model, lam, w = random_instance(rng, "poisson", n=100, p=6)
    with pytest.raises(NonConvergenceError) as err:
        solve_weighted_l1(shard, model, lam * 0.01, w, AdmmConfig(max_outer_iter=1, primal_tol=1e-14))
    assert err.value.iterations == 1


def test_argument_errors():
    shard = DataShard(0, np.eye(2), [1.0, 2.0])
    with pytest.raises(ConfigurationError):
        solve_weighted_l1(shard, LS, 0.1, [1.0, 0.0])
    with pytest.raises(ConfigurationError):
        solve_weighted_l1(shard, LS, -0.1, [1.0, 1.0])
    with pytest.raises(DimensionError):
        solve_weighted_l1(shard, LS, 0.1, [1.0])
    with pytest.raises(DimensionError):
        solve_weighted_l1(shard, LS, 0.1, [1.0, 1.0], init=[0.0])
    with pytest.raises(ConfigurationError):
        AdmmConfig(eta=0.0)


def test_warm_start_does_not_change_answer():
    rng = np.random.default_rng(9)
    shard, model, lam, w = random_instance(rng, "poisson", n=150, p=5)
    cold = solve_weighted_l1(shard, model, lam, w)
    warm = solve_weighted_l1(shard, model, lam, w, init=cold + 0.1)
    np.testing.assert_allclose(cold, warm, atol=1e-5)
