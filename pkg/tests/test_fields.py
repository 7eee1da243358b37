"""Exactness, moments, and Euler-Maruyama behaviour of the solution fields."""

import math

import numpy as np
import pytest

from mlpicard import rng
from mlpicard.errors import UsageError
from mlpicard.fields import (
    BrownianFlow,
    EulerMaruyamaFlow,
    GbmFlow,
    GbmParams,
    SdeCoefficients,
    gbm_coefficients,
    moment_bound,
)

KEY = rng.stream_key(77, (1,), rng.TAG_FIELD)


def test_bm_identity_at_equal_times():
    flow = BrownianFlow(3)
    x = np.array([1.0, -2.0, 0.5])
    y, draws = flow.evaluate(0.3, 0.3, x, KEY)
    assert np.array_equal(y, x)
    assert draws == 3


def test_bm_rejects_reversed_interval():
    with pytest.raises(UsageError):
        BrownianFlow(1).evaluate(0.5, 0.2, np.zeros(1), KEY)


def test_bm_mean_and_norm_moments():
    n = 10**5
    flow1 = BrownianFlow(1)
    xs, draws = flow1.evaluate_batch(0.0, 1.0, np.zeros(1), KEY, n)
    assert draws == n
    assert abs(xs.mean()) < 4.0 / math.sqrt(n)

    flow3 = BrownianFlow(3)
    xs, _ = flow3.evaluate_batch(0.0, 1.0, np.zeros(3), rng.stream_key(2, (1,), b"t"), n)
    sq = np.sum(xs**2, axis=1)
    # E||W_1||^2 = 3, Var(chi2_3) = 6
    assert abs(sq.mean() - 3.0) < 5.0 * math.sqrt(6.0 / n)


def test_gbm_deterministic_when_volatility_vanishes():
    params = GbmParams.uncorrelated(0.07, 0.0, 2)
    flow = GbmFlow(params)
    x = np.array([1.5, 2.0])
    y, draws = flow.evaluate(0.25, 1.0, x, KEY)
    assert draws == 2
    assert np.allclose(y, x * math.exp(0.07 * 0.75), rtol=1e-12, atol=0.0)


def test_gbm_identity_at_equal_times():
    params = GbmParams.uncorrelated(0.05, 0.2, 2)
    x = np.array([3.0, 4.0])
    y, draws = GbmFlow(params).evaluate(0.5, 0.5, x, KEY)
    assert np.array_equal(y, x)
    assert draws == 2


def test_gbm_terminal_mean():
    params = GbmParams.uncorrelated(0.05, 0.2, 1)
    flow = GbmFlow(params)
    n = 10**5
    xs, _ = flow.evaluate_batch(0.0, 1.0, np.array([1.0]), rng.stream_key(5, (2,), b"t"), n)
    target = math.exp(0.05)
    stderr = xs.std() / math.sqrt(n)
    assert abs(xs.mean() - target) < 5.0 * stderr


def test_gbm_unit_column_validation():
    with pytest.raises(UsageError):
        GbmParams(
            alphas=np.array([0.0, 0.0]),
            betas=np.array([0.1, 0.1]),
            sigma_cols=np.array([[1.0, 0.5], [0.5, 1.0]]),
        )


def test_gbm_kappa_cap_enforced():
    with pytest.raises(UsageError):
        GbmParams(
            alphas=np.array([0.5]),
            betas=np.array([0.1]),
            sigma_cols=np.eye(1),
            kappa=0.1,
        )


def test_em_frozen_dynamics():
    coef = SdeCoefficients(
        mu=lambda t, x: np.zeros_like(x),
        sigma=lambda t, x: np.zeros((x.shape[-1], 1)),
        noise_dim=1,
        lipschitz=0.0,
        growth=(0.0, 0.0),
    )
    flow = EulerMaruyamaFlow(coef, 2, steps=5)
    x = np.array([1.0, -1.0])
    y, draws = flow.evaluate(0.0, 1.0, x, KEY)
    assert np.array_equal(y, x)
    assert draws == 5


def test_em_single_step_algebra():
    params = GbmParams.uncorrelated(0.05, 0.2, 1)
    flow = EulerMaruyamaFlow(gbm_coefficients(params), 1, steps=1)
    key = rng.stream_key(9, (3,), rng.TAG_FIELD)
    y, draws = flow.evaluate(0.0, 0.5, np.array([2.0]), key)
    dw = math.sqrt(0.5) * rng.std_normals(key, 0, 1)[0]
    assert draws == 1
    assert y[0] == pytest.approx(2.0 * (1.0 + 0.05 * 0.5 + 0.2 * dw), rel=1e-14)


def test_em_strong_error_slope_toward_exact_gbm():
    # coupled RMS error vs gbm_flow at h = 2^-k: slope should sit near 1/2
    params = GbmParams.uncorrelated(0.05, 0.2, 1)
    exact = GbmFlow(params)
    coef = gbm_coefficients(params)
    paths = 4000
    hs, errs = [], []
    for k in range(2, 8):
        n = 2**k
        key = rng.stream_key(31, (k,), b"em")
        z = rng.std_normals(key, 0, paths * n).reshape(paths, n)
        h = 1.0 / n
        dw = math.sqrt(h) * z
        y = np.ones((paths, 1))
        for j in range(n):
            tj = j * h
            y = y + coef.mu(tj, y) * h + np.einsum(
                "pdm,pm->pd", coef.sigma(tj, y), dw[:, j : j + 1]
            )
        ref = exact.endpoint_from_increment(0.0, 1.0, np.ones((paths, 1)), dw.sum(axis=1)[:, None])
        errs.append(math.sqrt(float(np.mean((y - ref) ** 2))))
        hs.append(h)
    slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    assert 0.4 <= slope <= 0.6


def test_sde_growth_validation():
    params = GbmParams.uncorrelated(0.05, 0.2, 2)
    gbm_coefficients(params).validate_growth(2, 1.0, seed=3)
    lying = SdeCoefficients(
        mu=lambda t, x: x,
        sigma=lambda t, x: np.zeros((x.shape[-1], 1)),
        noise_dim=1,
        lipschitz=1.0,
        growth=(0.0, 0.0),
    )
    with pytest.raises(UsageError):
        lying.validate_growth(2, 1.0, seed=3)


def test_moment_bound_examples():
    assert moment_bound(0, 3.0, 1.0, 2.0, 5.0) == pytest.approx(2.0 * 2.0)
    assert moment_bound(2, 0.0, 0.0, 1.0, 0.0) == pytest.approx(math.exp(5.0))
    with pytest.raises(UsageError):
        moment_bound(-1, 0.0, 0.0, 1.0, 0.0)
    with pytest.raises(UsageError):
        moment_bound(2, 0.0, 0.0, 0.0, 0.0)


def test_moment_bound_dominates_brownian_second_moment():
    n = 10**5
    xs, _ = BrownianFlow(1).evaluate_batch(0.0, 1.0, np.zeros(1), rng.stream_key(8, (4,), b"t"), n)
    emp = float(np.mean(xs**2))
    assert emp <= moment_bound(2, 1.0, 0.0, 1.0, 0.0)
    assert emp == pytest.approx(1.0, abs=5.0 * math.sqrt(2.0 / n))


def test_flow_composition_preserves_mean():
    # GBM flow property at the moment level, small-sample version of A5
    params = GbmParams.uncorrelated(0.05, 0.2, 1)
    flow = GbmFlow(params)
    x = np.array([1.0])
    n = 20_000
    mid, _ = flow.evaluate_batch(0.0, 0.5, x, rng.stream_key(6, (1,), b"a"), n)
    comp, _ = flow.evaluate_batch(0.5, 1.0, mid, rng.stream_key(6, (2,), b"b"), n)
    direct, _ = flow.evaluate_batch(0.0, 1.0, x, rng.stream_key(6, (3,), b"c"), n)
    stderr = math.hypot(comp.std() / math.sqrt(n), direct.std() / math.sqrt(n))
    assert abs(comp.mean() - direct.mean()) < 5.0 * stderr
