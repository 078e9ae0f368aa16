import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import solve_discrete_lyapunov

from msqcd.model import (ARCoefChangeModel, GaussianMeanShiftModel, PowerLawProfile, StreamHistory, companion,
                         information_number, llr_increment, llr_increment_ar, residual, simulate_path,
                         stationary_covariance)


def history_of(X):
    h = StreamHistory(X.shape[0], X.shape[1])
    for col in X.T:
        h.append(col)
    return h


class ConstProfile(PowerLawProfile):
    def __call__(self, n):
        return np.ones_like(np.asarray(n, dtype=float))


# --- StreamHistory ------------------------------------------------------------------

def test_history_ring_buffer_and_time_index():
    h = StreamHistory(2, 3)
    for t in range(1, 6):
        h.append([t, -t])
        assert h.n == t
        assert len(h) <= 3
    assert h.value(0, 5) == 5 and h.value(1, 3) == -3
    assert h.value(0, 0) == 0.0
    with pytest.raises(IndexError):
        h.value(0, 1)  # fell out of the buffer
    with pytest.raises(ValueError):
        h.append([np.nan, 0.0])


# --- residuals ----------------------------------------------------------------------

def test_residual_without_ar_is_identity(rng):
    m = GaussianMeanShiftModel(PowerLawProfile(1.0, 1.1), 2.0, n_streams=2)
    X = rng.standard_normal((2, 6))
    h = history_of(X)
    for t in range(1, 7):
        s, x = residual(m, 1, t, h)
        assert s == pytest.approx(t ** 1.1) and x == X[1, t - 1]


def test_residual_ar1_constant_profile():
    m = GaussianMeanShiftModel(ConstProfile(1.0, 1.0), 1.0, rho=[0.5], n_streams=1)
    h = history_of(np.array([[1.0, 1.0]]))
    s, x = residual(m, 0, 2, h)
    assert s == pytest.approx(0.5) and x == pytest.approx(0.5)


def test_residual_ar2_matches_scalar_formula(rng):
    rho = (0.3, 0.2)
    m = GaussianMeanShiftModel(PowerLawProfile(1.0, 1.1), 1.5, rho=list(rho), n_streams=1)
    X = rng.standard_normal((1, 5))
    h = history_of(X)
    s, x = residual(m, 0, 5, h)
    assert s == pytest.approx(5 ** 1.1 - 0.3 * 4 ** 1.1 - 0.2 * 3 ** 1.1, rel=1e-14)
    assert x == pytest.approx(X[0, 4] - 0.3 * X[0, 3] - 0.2 * X[0, 2], rel=1e-14)


def test_residual_errors(rng):
    m = GaussianMeanShiftModel(PowerLawProfile(1.0, 1.1), 1.0, n_streams=2)
    h = history_of(rng.standard_normal((2, 3)))
    with pytest.raises(IndexError):
        residual(m, 5, 1, h)
    with pytest.raises(IndexError):
        residual(m, 0, 4, h)


def test_unstable_ar_rejected():
    with pytest.raises(ValueError):
        GaussianMeanShiftModel(PowerLawProfile(1.0, 1.1), 1.0, rho=[1.2], n_streams=1)
    with pytest.raises(ValueError):
        GaussianMeanShiftModel(PowerLawProfile(1.0, 1.1), 0.0, n_streams=1)


# --- LLR increments -----------------------------------------------------------------

def test_llr_zero_parameter_and_noise_free_identity(rng):
    m = GaussianMeanShiftModel(PowerLawProfile(1.0, 1.1), 2.0, rho=[0.4], n_streams=1)
    h = history_of(rng.standard_normal((1, 8)))
    assert llr_increment(m, 0, 0.0, 8, h) == 0.0
    theta = 0.3
    X = m.simulate_path(0, [0], theta, 8) * 0  # shape only
    t = np.arange(1, 9)
    xi = theta * t ** 1.1
    # build X so that the whitened residual equals theta * S~_t exactly
    X[0] = xi
    h = history_of(X)
    for tt in range(2, 9):
        s, _ = residual(m, 0, tt, h)
        assert llr_increment(m, 0, theta, tt, h) == pytest.approx(theta ** 2 * s ** 2 / (2 * 4.0), rel=1e-12)


def test_llr_ar_examples(rng):
    m = ARCoefChangeModel([0.0])
    h = history_of(np.array([[2.0, 1.0]]))
    assert llr_increment_ar(m, 0, [0.5], 2, h) == pytest.approx(0.5)
    assert llr_increment_ar(m, 0, [0.0], 2, h) == 0.0
    with pytest.raises(ValueError):
        llr_increment_ar(m, 0, [0.1, 0.2], 2, h)


def test_llr_ar_matches_log_density_difference(rng):
    ts, th = np.array([0.3, -0.2]), np.array([0.5, 0.1])
    m = ARCoefChangeModel(ts)
    X = rng.standard_normal((1, 6))
    h = history_of(X)
    t = 6
    lags = X[0, [4, 3]]
    logpdf = lambda x, mu: -0.5 * math.log(2 * math.pi) - 0.5 * (x - mu) ** 2
    ref = logpdf(X[0, 5], th @ lags) - logpdf(X[0, 5], ts @ lags)
    assert llr_increment_ar(m, 0, th, t, h) == pytest.approx(ref, rel=1e-12)


def test_lr_martingale_property_mean_shift(rng):
    # E_inf[exp(lambda_t) | F_{t-1}] = 1, checked on 1e5 parallel streams sharing one past
    M = 10 ** 5
    m = GaussianMeanShiftModel(PowerLawProfile(1.0, 1.1), 2.0, rho=[0.4], n_streams=M)
    h = StreamHistory(M, 2)
    h.append(np.full(M, 0.7))
    h.append(0.4 * 0.7 + 2.0 * rng.standard_normal(M))
    lr = np.exp(m.llr_block(h, 2, np.array([0]), np.full((1, M), 0.4))[0, :, 0])
    assert abs(lr.mean() - 1) < 3 * lr.std(ddof=1) / math.sqrt(M)


def test_lr_martingale_property_ar(rng):
    M = 10 ** 5
    ts = np.array([0.3, -0.2])
    m = ARCoefChangeModel(ts, n_streams=M)
    h = StreamHistory(M, 3)
    h.append(np.full(M, -1.1))
    h.append(np.full(M, 0.8))
    h.append(ts @ np.array([0.8, -1.1]) + rng.standard_normal(M))
    lr = np.exp(m.llr_block(h, 3, np.array([0]), np.array([[0.5, 0.1]]))[0, :, 0])
    assert abs(lr.mean() - 1) < 3 * lr.std(ddof=1) / math.sqrt(M)


# --- information numbers --------------------------------------------------------------

@pytest.mark.parametrize("m", [1, 2, 3])
def test_info_number_setup(m):
    model = GaussianMeanShiftModel(PowerLawProfile(1.0, 1.1), 2.0, n_streams=10)
    info = information_number(model, range(m), 0.1)
    assert info.value == pytest.approx(m * 3.90625e-4, rel=1e-12)
    assert info.psi_exponent == pytest.approx(3.2)
    assert info.psi(2.0) == pytest.approx(2.0 ** 3.2)
    assert sum(info.per_stream) == info.value  # additivity


def test_info_number_ar1():
    info = ARCoefChangeModel([0.0]).information_number([0], [0.5])
    assert info.value == pytest.approx(1 / 6, rel=1e-10)
    assert info.psi_exponent == 1.0


def test_info_number_unstable_rejected():
    with pytest.raises(ValueError):
        ARCoefChangeModel([0.0]).information_number([0], [1.5])


@given(st.floats(-0.6, 0.6), st.floats(-0.3, 0.3))
def test_stationary_covariance_matches_lyapunov(a, b):
    theta = np.array([a, b])
    if np.max(np.abs(np.linalg.eigvals(companion(theta)))) >= 0.95:
        return
    q = np.zeros((2, 2))
    q[0, 0] = 1.0
    ref = solve_discrete_lyapunov(companion(theta), q)
    assert np.allclose(stationary_covariance(theta), ref, rtol=1e-9, atol=1e-11)


# --- simulation ---------------------------------------------------------------------

def test_simulate_no_change_mean_zero():
    m = GaussianMeanShiftModel(PowerLawProfile(1.0, 1.1), 2.0, n_streams=3)
    X = np.stack([m.simulate_path(None, (), 0.1, 12, seed=s)[:, -1] for s in range(10 ** 4)])
    se = X.std(axis=0, ddof=1) / math.sqrt(X.shape[0])
    assert np.all(np.abs(X.mean(axis=0)) < 3 * se)


def test_simulate_mean_after_change():
    m = GaussianMeanShiftModel(PowerLawProfile(1.0, 1.1), 2.0, n_streams=2)
    x10 = np.array([m.simulate_path(0, [0], 0.1, 10, seed=s)[:, 9] for s in range(10 ** 4)])
    se = x10.std(axis=0, ddof=1) / 100
    assert abs(x10[:, 0].mean() - 0.1 * 10 ** 1.1) < 3 * se[0]
    assert abs(x10[:, 1].mean()) < 3 * se[1]


def test_simulate_change_at_horizon_is_null_in_distribution():
    m = GaussianMeanShiftModel(PowerLawProfile(1.0, 1.1), 2.0, n_streams=2)
    a = m.simulate_path(5, [0, 1], 0.5, 5, seed=3)
    b = m.simulate_path(None, (), 0.5, 5, seed=3)
    assert np.array_equal(a, b)  # same seed, no post-change sample included


def test_simulate_deterministic_and_validated():
    m = GaussianMeanShiftModel(PowerLawProfile(1.0, 1.1), 2.0, rho=[0.3], n_streams=2)
    assert np.array_equal(simulate_path(m, 3, [1], 0.2, 20, seed=9), simulate_path(m, 3, [1], 0.2, 20, seed=9))
    with pytest.raises(ValueError):
        m.simulate_path(3, [], 0.2, 20)
    with pytest.raises(ValueError):
        m.simulate_path(-2, [0], 0.2, 20)
    # nu = -1 generates like nu = 0
    assert np.array_equal(m.simulate_path(-1, [0], 0.2, 9, seed=1), m.simulate_path(0, [0], 0.2, 9, seed=1))


def test_ar_coef_simulation_matches_recursion():
    m = ARCoefChangeModel([0.2])
    X = m.simulate_path(3, [0], [0.7], 6, seed=4)
    w = np.random.default_rng(4).standard_normal((1, 6))
    ref = np.zeros(6)
    for t in range(6):
        c = 0.7 if t + 1 > 3 else 0.2
        ref[t] = w[0, t] + (c * ref[t - 1] if t else 0.0)
    assert np.allclose(X[0], ref)
