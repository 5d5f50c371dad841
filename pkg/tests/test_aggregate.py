import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar
from scipy.stats import norm

from wavereg.aggregate import (
    LocalSummary,
    aggregate,
    bic_criterion,
    confidence_intervals,
    coordinate_weights,
    delta_weights,
    full_ls_reference,
    normal_quantile,
    select_nu_bic,
    simple_average,
    variance_estimate,
    wave_point,
    wave_sparse,
    wave_sparse_admm,
)
from wavereg.errors import ConfigurationError, DataIntegrityError, DimensionError


def S(j, n, beta, gam=None):
    beta = np.asarray(beta, float)
    return LocalSummary(j, n, beta, np.ones_like(beta) if gam is None else gam)


def random_summaries(rng, K, p):
    return [
        LocalSummary(j, int(rng.integers(50, 500)), rng.normal(size=p), rng.uniform(0.1, 5.0, p))
        for j in range(K)
    ]


def test_simple_average_examples():
    np.testing.assert_array_equal(simple_average([S(0, 5, [1, 0]), S(1, 5, [0, 1])]), [0.5, 0.5])
    np.testing.assert_array_equal(simple_average([S(0, 7, [1.5, -2])]), [1.5, -2])
    np.testing.assert_allclose(simple_average([S(0, 30, [4.0]), S(1, 10, [0.0])]), [3.0])
    with pytest.raises(DimensionError):
        simple_average([S(0, 5, [1, 0]), S(1, 5, [0])])


def test_wave_point_examples():
    beta, _ = wave_point([S(0, 10, [0.0], [1.0]), S(1, 10, [4.0], [3.0])])
    assert beta[0] == 3.0
    with pytest.raises(DataIntegrityError, match="worker 1"):
        wave_point([S(0, 10, [0.0, 1.0]), S(1, 10, [1.0, 1.0], [1.0, 0.0])])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), K=st.integers(1, 8), p=st.integers(1, 6))
def test_collapse_identity(seed, K, p):
    rng = np.random.default_rng(seed)
    g = rng.uniform(0.1, 5.0, p)
    sums = [LocalSummary(j, int(rng.integers(1, 100)), rng.normal(size=p), g) for j in range(K)]
    beta, _ = wave_point(sums)
    np.testing.assert_allclose(beta, simple_average(sums), rtol=0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), K=st.integers(1, 8), p=st.integers(1, 6))
def test_weights_sum_to_one(seed, K, p):
    rng = np.random.default_rng(seed)
    sums = random_summaries(rng, K, p)
    n = np.array([s.n_j for s in sums], float)
    w = coordinate_weights(n / n.sum(), np.vstack([s.lambda_diag for s in sums]))
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), K=st.integers(1, 6), p=st.integers(1, 6))
def test_diagonal_identity(seed, K, p):
    rng = np.random.default_rng(seed)
    sums = random_summaries(rng, K, p)
    alpha = np.array([s.n_j for s in sums], float)
    alpha /= alpha.sum()
    ref = full_ls_reference([(s.beta_hat, np.diag(s.lambda_diag)) for s in sums], alpha)
    np.testing.assert_allclose(ref, wave_point(sums)[0], atol=1e-10)


def test_full_ls_reference_identity_and_single():
    rng = np.random.default_rng(0)
    sums = [S(j, 10 * (j + 1), rng.normal(size=3)) for j in range(3)]
    alpha = np.array([10, 20, 30]) / 60
    np.testing.assert_allclose(
        full_ls_reference([(s.beta_hat, np.eye(3)) for s in sums], alpha), simple_average(sums), atol=1e-14
    )
    m = np.array([[2.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(full_ls_reference([([1.0, -1.0], m)], [1.0]), [1.0, -1.0], atol=1e-14)


def test_delta_weights_shares_adaptive_contract():
    np.testing.assert_array_equal(delta_weights([2.0, 0.5, 0.0]), [0.5, 2.0, np.inf])


def test_wave_sparse_examples():
    b = np.array([0.5, -1.0, 0.0])
    v = np.array([1.0, 2.0, 1.0])
    np.testing.assert_array_equal(wave_sparse(b, v, np.ones(3), 0.0), b)
    out = wave_sparse([0.5], [1.0], [1.0], 0.2)
    ref = minimize_scalar(lambda t: 0.5 * (t - 0.5) ** 2 + 0.2 * abs(t), bounds=(-1, 1),
                          method="bounded", options={"xatol": 1e-12}).x
    assert out[0] == pytest.approx(0.3, abs=1e-15)
    assert out[0] == pytest.approx(ref, abs=1e-8)
    assert wave_sparse([3.0], [1.0], [np.inf], 0.1)[0] == 0.0
    with pytest.raises(DataIntegrityError):
        wave_sparse([1.0], [0.0], [1.0], 0.1)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_wave_sparse_matches_admm(seed):
    rng = np.random.default_rng(seed)
    p = int(rng.integers(1, 8))
    b = rng.normal(size=p)
    v = rng.uniform(0.2, 4.0, p)
    d = rng.uniform(0.2, 4.0, p)
    nu = float(rng.uniform(0, 1.0))
    np.testing.assert_allclose(wave_sparse(b, v, d, nu), wave_sparse_admm(b, v, d, nu), atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_wave_sparse_path_monotone(seed):
    rng = np.random.default_rng(seed)
    p = 6
    b = rng.normal(size=p)
    v = rng.uniform(0.2, 4.0, p)
    d = rng.uniform(0.2, 4.0, p)
    prev = None
    for nu in np.linspace(0, 3, 40):
        cur = wave_sparse(b, v, d, nu)
        if prev is not None:
            assert set(np.flatnonzero(cur)) <= set(np.flatnonzero(prev))
            assert np.all(np.abs(cur) <= np.abs(prev))
        prev = cur


def test_select_nu_examples():
    b = np.array([5.0, 1e-4])
    v = np.ones(2)
    nu, fit = select_nu_bic(b, v, np.ones(2), [0.0], 1000)
    assert nu == 0.0
    np.testing.assert_array_equal(fit, b)
    assert bic_criterion(fit, b, v, 1000) == pytest.approx(np.log(1000) * 2 / 1000)

    nu, fit = select_nu_bic(b, v, np.ones(2), [0.0, 1e-3, 10.0], 1000)
    assert nu == 1e-3
    assert fit[1] == 0.0 and fit[0] != 0.0

    # both grid points beyond nu_max tie on the empty model
    nu, fit = select_nu_bic([0.1], [1.0], [1.0], [5.0, 7.0, 6.0], 10)
    assert nu == 7.0
    with pytest.raises(ConfigurationError):
        select_nu_bic(b, v, np.ones(2), [], 10)


def test_normal_quantile_against_scipy():
    qs = np.concatenate([np.linspace(1e-10, 1e-3, 50), np.linspace(0.001, 0.999, 500), 1 - np.geomspace(1e-3, 1e-10, 50)])
    for q in qs:
        assert normal_quantile(q) == pytest.approx(norm.ppf(q), abs=1e-8)


def test_confidence_interval_examples():
    var = variance_estimate([1.0], [[1.0]])
    assert var.var_wave[0] == pytest.approx(1.0)
    hw = confidence_intervals(var, 10000, 0.95)
    assert hw[0] == pytest.approx(1.959964 * 0.01, abs=1e-6)
    from wavereg.aggregate import VarianceEstimate

    assert confidence_intervals(VarianceEstimate(np.ones(1), np.zeros(1)), 100)[0] == 0.0
    levels = np.linspace(0.5, 0.999, 20)
    widths = [confidence_intervals(var, 100, lv)[0] for lv in levels]
    assert np.all(np.diff(widths) > 0)
    with pytest.raises(ConfigurationError):
        confidence_intervals(var, 100, 1.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), factor=st.floats(1.01, 10.0))
def test_variance_monotone_in_sigma2(seed, factor):
    rng = np.random.default_rng(seed)
    alpha = np.array([0.5, 0.5])
    gam = rng.uniform(0.2, 3.0, (2, 3))
    sig = rng.uniform(0.2, 3.0, (2, 3))
    base = variance_estimate(alpha, gam, sig)
    sig2 = sig.copy()
    sig2[1] *= factor
    bumped = variance_estimate(alpha, gam, sig2)
    assert np.all(bumped.var_wave > base.var_wave)
    np.testing.assert_array_equal(bumped.v_diag, base.v_diag)


def test_default_variance_is_inverse_precision_average():
    alpha = np.array([0.25, 0.75])
    gam = np.array([[2.0], [4.0]])
    var = variance_estimate(alpha, gam)
    assert var.v_diag[0] == pytest.approx(3.5)
    assert var.var_wave[0] == pytest.approx(1 / 3.5)


def test_aggregate_order_independent():
    rng = np.random.default_rng(3)
    sums = random_summaries(rng, 6, 5)
    a = aggregate(sums)
    b = aggregate(list(reversed(sums)))
    assert a.beta_sparse.tobytes() == b.beta_sparse.tobytes()
    assert a.nu_hat == b.nu_hat
    np.testing.assert_allclose(a.alpha.sum(), 1.0)
    assert a.support == tuple(np.flatnonzero(a.beta_sparse))
