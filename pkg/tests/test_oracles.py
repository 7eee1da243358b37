"""Cross-checks between the closed-form, finite-difference, and Picard oracles."""

import math

import numpy as np
import pytest

from mlpicard.errors import StabilityError, UsageError
from mlpicard.fields import BrownianFlow, GbmFlow, GbmParams
from mlpicard.mlp import (
    CappedMinTerminal,
    ConstantTerminal,
    Problem,
    SquaredNormTerminal,
    SumTerminal,
)
from mlpicard.nonlinearity import linear_f, make_nonlinearity
from mlpicard.oracles import (
    fd_solve_1d,
    linear_closed_form,
    linear_picard_mean,
    nested_picard,
    terminal_mean,
)


def bm_problem(c=1.0, d=1, g=None):
    return Problem(
        d, 1.0, np.zeros(d), BrownianFlow(d), linear_f(c), g or SquaredNormTerminal()
    )


def gbm_problem(alpha=0.0, beta=0.2, d=1, xi=1.0, g=None):
    params = GbmParams.uncorrelated(alpha, beta, d)
    return Problem(
        d, 1.0, np.full(d, xi), GbmFlow(params), linear_f(0.0), g or SumTerminal()
    )


def test_closed_form_examples():
    ref = linear_closed_form(0.0, "bm", "squared_norm", bm_problem(0.0))
    assert ref.value == pytest.approx(1.0)
    assert ref.method == "closed_form" and ref.error_estimate == 0.0

    driftless = gbm_problem(alpha=0.0, xi=2.0, d=3)
    ref = linear_closed_form(0.0, "gbm", "sum_of_coordinates", driftless)
    assert ref.value == pytest.approx(6.0)

    ref = linear_closed_form(1.0, "bm", "squared_norm", bm_problem(1.0, d=2))
    assert ref.value == pytest.approx(2.0 * math.e)


def test_closed_form_gbm_second_moment():
    problem = gbm_problem(alpha=0.05, beta=0.2, xi=1.5, g=SquaredNormTerminal())
    assert terminal_mean("gbm", "squared_norm", problem) == pytest.approx(
        1.5**2 * math.exp((2 * 0.05 + 0.2**2) * 1.0)
    )


def test_closed_form_rejects_unsupported_combination():
    problem = bm_problem(0.0, g=CappedMinTerminal(100.0))
    with pytest.raises(UsageError):
        linear_closed_form(0.0, "bm", "min_capped", problem)
    with pytest.raises(UsageError):
        terminal_mean("gbm", "sum_of_coordinates", bm_problem(0.0))


def test_linear_picard_mean_unrolls():
    assert linear_picard_mean(1.0, 1.0, 0, 3.0) == 0.0
    assert linear_picard_mean(1.0, 1.0, 1, 3.0) == pytest.approx(3.0)
    assert linear_picard_mean(1.0, 1.0, 2, 3.0) == pytest.approx(6.0)
    assert linear_picard_mean(0.5, 2.0, 3, 1.0) == pytest.approx(1.0 + 1.0 + 0.5)


def test_fd_constant_solution_is_exact():
    problem = Problem(
        1, 1.0, np.zeros(1), BrownianFlow(1), make_nonlinearity("zero"), ConstantTerminal(1.0)
    )
    ref = fd_solve_1d(problem, space_nodes=100)
    assert abs(ref.value - 1.0) < 1e-8
    assert ref.method == "finite_difference"


def test_fd_matches_closed_form_linear_heat():
    problem = bm_problem(1.0)
    ref = fd_solve_1d(problem, space_nodes=200)
    exact = linear_closed_form(1.0, "bm", "squared_norm", problem).value
    assert abs(ref.value - exact) <= ref.error_estimate + 1e-6


def test_fd_richardson_estimate_shrinks_second_order():
    problem = bm_problem(1.0)
    estimates = [
        fd_solve_1d(problem, space_nodes=nodes).error_estimate
        for nodes in (100, 200, 400)
    ]
    for coarse, fine in zip(estimates, estimates[1:]):
        assert coarse / fine == pytest.approx(4.0, rel=0.5)


def test_fd_stability_error_names_required_steps():
    problem = bm_problem(1.0)
    with pytest.raises(StabilityError) as info:
        fd_solve_1d(problem, space_nodes=100, time_steps=10)
    assert info.value.required_steps > 10
    fd_solve_1d(problem, space_nodes=100, time_steps=info.value.required_steps)


def test_fd_gbm_log_coordinates_match_closed_form():
    problem = gbm_problem(alpha=0.05, beta=0.2, xi=1.0, g=SumTerminal())
    ref = fd_solve_1d(problem, space_nodes=300)
    exact = linear_closed_form(0.0, "gbm", "sum_of_coordinates", problem).value
    assert abs(ref.value - exact) <= ref.error_estimate + 1e-4


def test_fd_requires_one_dimension():
    with pytest.raises(UsageError):
        fd_solve_1d(bm_problem(1.0, d=2))


def test_nested_picard_depth_zero():
    ref = nested_picard(bm_problem(1.0), 0, 100, seed=1)
    assert ref.value == 0.0 and ref.error_estimate == 0.0


def test_nested_picard_depth_one_matches_terminal_mean():
    problem = bm_problem(1.0)
    ref = nested_picard(problem, 1, 800, seed=3)
    # U_1 = E[g] when f(.,.,0) = 0
    assert abs(ref.value - 1.0) <= 5.0 * ref.error_estimate


def test_nested_picard_depth_two_matches_analytic_unroll():
    problem = bm_problem(1.0)
    ref = nested_picard(problem, 2, 800, seed=4)
    target = linear_picard_mean(1.0, 1.0, 2, 1.0)
    assert abs(ref.value - target) <= 5.0 * ref.error_estimate


def test_nested_picard_guards():
    problem = bm_problem(1.0)
    with pytest.raises(UsageError):
        nested_picard(problem, 4, 100)
    with pytest.raises(UsageError):
        nested_picard(problem, 2, 2000)


def default_risk_problem():
    params = GbmParams.uncorrelated(0.02, 0.2, 1)
    f = make_nonlinearity(
        "default_risk",
        rate=0.02,
        recovery=0.3,
        gamma_low=0.02,
        gamma_high=0.2,
        v_low=50.0,
        v_high=25.0,
    )
    return Problem(1, 1.0, np.array([40.0]), GbmFlow(params), f, CappedMinTerminal(100.0))


def test_nested_picard_trend_toward_fd_on_default_risk():
    problem = default_risk_problem()
    u_fd = fd_solve_1d(problem, space_nodes=200).value
    gaps = []
    for rep in range(20):
        u1 = nested_picard(problem, 1, 60, seed=100 + rep).value
        u3 = nested_picard(problem, 3, 60, seed=100 + rep).value
        gaps.append(abs(u1 - u_fd) - abs(u3 - u_fd))
    gaps = np.array(gaps)
    stderr = gaps.std(ddof=1) / math.sqrt(len(gaps))
    assert gaps.mean() > 3.0 * stderr
