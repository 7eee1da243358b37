"""Branch identities and certified constants of the nonlinearities."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mlpicard.errors import UsageError
from mlpicard.nonlinearity import (
    DefaultRiskParams,
    LinearNonlinearity,
    Nonlinearity,
    ZeroNonlinearity,
    default_risk_f,
    intensity_clamp,
    linear_f,
    lipschitz_of_default_risk,
    make_nonlinearity,
    validate_nonlinearity,
)

PARAMS = DefaultRiskParams(
    rate=0.02, recovery=0.3, gamma_low=0.02, gamma_high=0.2, v_low=50.0, v_high=25.0
)


def test_params_validation():
    with pytest.raises(UsageError):
        DefaultRiskParams(0.02, 0.3, 0.2, 0.02, 50.0, 25.0)  # gammas reversed
    with pytest.raises(UsageError):
        DefaultRiskParams(0.02, 0.3, 0.02, 0.2, 25.0, 50.0)  # thresholds reversed
    with pytest.raises(UsageError):
        DefaultRiskParams(0.02, 1.0, 0.02, 0.2, 50.0, 25.0)  # recovery = 1


def test_clamp_anchor_points():
    assert intensity_clamp(PARAMS, PARAMS.v_high) == pytest.approx(PARAMS.gamma_high)
    assert intensity_clamp(PARAMS, PARAMS.v_low) == pytest.approx(PARAMS.gamma_low)
    mid = 0.5 * (PARAMS.v_high + PARAMS.v_low)
    assert intensity_clamp(PARAMS, mid) == pytest.approx(
        0.5 * (PARAMS.gamma_high + PARAMS.gamma_low)
    )


@given(st.floats(-200.0, 200.0))
def test_clamp_stays_in_band(u):
    q = intensity_clamp(PARAMS, u)
    assert PARAMS.gamma_low <= q <= PARAMS.gamma_high


def test_default_risk_branch_formulas():
    assert default_risk_f(PARAMS, 0.0) == 0.0
    loss = 1.0 - PARAMS.recovery
    for u in np.linspace(-40.0, PARAMS.v_high, 17):
        assert default_risk_f(PARAMS, u) == pytest.approx(
            -(PARAMS.rate + loss * PARAMS.gamma_high) * u
        )
    for u in np.linspace(PARAMS.v_low, 3.0 * PARAMS.v_low, 17):
        assert default_risk_f(PARAMS, u) == pytest.approx(
            -(PARAMS.rate + loss * PARAMS.gamma_low) * u
        )


def test_continuity_at_branch_junctions():
    eps = 1e-7
    for v in (PARAMS.v_high, PARAMS.v_low):
        left = default_risk_f(PARAMS, v - eps)
        right = default_risk_f(PARAMS, v + eps)
        scale = max(abs(default_risk_f(PARAMS, v)), 1.0)
        assert abs(left - right) / scale < 1e-5  # ~ L * 2eps / scale


def test_lipschitz_limit_cases():
    # recovery -> 1 kills the nonlinear term, leaving the discount rate
    near_full = DefaultRiskParams(0.02, 1.0 - 1e-12, 0.02, 0.2, 50.0, 25.0)
    assert lipschitz_of_default_risk(near_full) == pytest.approx(0.02, rel=1e-9)
    # gamma spread -> 0 makes the clamp effectively constant
    flat = DefaultRiskParams(0.02, 0.3, 0.2 - 1e-13, 0.2, 50.0, 25.0)
    assert lipschitz_of_default_risk(flat) == pytest.approx(
        0.02 + 0.7 * 0.2, rel=1e-9
    )


def test_certified_lipschitz_dominates_difference_quotients():
    cert = lipschitz_of_default_risk(PARAMS)
    gen = np.random.default_rng(42)
    span = 2.0 * PARAMS.v_low
    u = gen.uniform(-span, span, 10**6)
    w = gen.uniform(-span, span, 10**6)
    f = make_nonlinearity(
        "default_risk",
        rate=PARAMS.rate,
        recovery=PARAMS.recovery,
        gamma_low=PARAMS.gamma_low,
        gamma_high=PARAMS.gamma_high,
        v_low=PARAMS.v_low,
        v_high=PARAMS.v_high,
    )
    fu = f.bulk_v(0.0, u)
    fw = f.bulk_v(0.0, w)
    gaps = np.abs(fu - fw)
    steps = np.abs(u - w)
    mask = steps > 0
    quotients = gaps[mask] / steps[mask]
    assert np.all(quotients <= cert * (1.0 + 1e-12))
    # the certificate is tight: brute force should come close to it
    assert quotients.max() > 0.9 * cert


def test_bulk_matches_scalar_evaluation():
    f = make_nonlinearity(
        "default_risk",
        rate=PARAMS.rate,
        recovery=PARAMS.recovery,
        gamma_low=PARAMS.gamma_low,
        gamma_high=PARAMS.gamma_high,
        v_low=PARAMS.v_low,
        v_high=PARAMS.v_high,
    )
    x = np.zeros(1)
    for u in np.linspace(-80.0, 120.0, 41):
        assert f.bulk_v(0.0, np.array([u]))[0] == pytest.approx(f(0.0, x, u))
        assert f(0.0, x, u) == pytest.approx(default_risk_f(PARAMS, u))


def test_linear_f_examples():
    assert linear_f(0.0)(0.0, np.zeros(1), 5.0) == 0.0
    assert linear_f(0.0).lipschitz == 0.0
    assert linear_f(1.0)(0.0, np.zeros(1), 2.5) == 2.5
    assert linear_f(-0.3)(0.0, np.zeros(1), 10.0) == pytest.approx(-3.0)


def test_registry_and_validation():
    for kind in ("zero", "linear"):
        f = make_nonlinearity(kind)
        validate_nonlinearity(f, dimension=2, horizon=1.0, points=500)
    f = make_nonlinearity(
        "default_risk",
        rate=0.02,
        recovery=0.3,
        gamma_low=0.02,
        gamma_high=0.2,
        v_low=50.0,
        v_high=25.0,
    )
    validate_nonlinearity(f, dimension=1, horizon=1.0, points=500, v_scale=100.0)
    with pytest.raises(UsageError):
        make_nonlinearity("cubic")


def test_validation_catches_understated_lipschitz():
    class Lying(Nonlinearity):
        def __init__(self):
            super().__init__(0.5, (0.0, 0.0, 0.0))

        def __call__(self, t, x, v):
            return 2.0 * v

    with pytest.raises(UsageError):
        validate_nonlinearity(Lying(), dimension=1, horizon=1.0, points=500)


def test_zero_nonlinearity():
    z = ZeroNonlinearity()
    assert z(0.3, np.ones(3), 17.0) == 0.0
    assert z.lipschitz == 0.0


def test_linear_is_exactly_lipschitz():
    f = LinearNonlinearity(-2.5)
    assert f.lipschitz == 2.5
    assert f.growth == (0.0, 0.0, 0.0)
