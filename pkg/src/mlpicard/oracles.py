"""Independent reference solutions used to verify estimator output.

Three routes of increasing generality:

* closed forms for linear nonlinearities f(v) = c v, where the fixed point is
  u(t, x) = exp(c (T - t)) E[g(X_{t,T}(x))] and the terminal mean has moment
  formulas for the Brownian and GBM flows,
* a 1-d explicit finite-difference solver for general Lipschitz f (GBM solved
  in log-price coordinates so the coefficients are constant),
* a nested Monte Carlo evaluation of the plain Picard iterates, used for
  trend checks only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import StabilityError, UsageError
from .fields import BrownianFlow, GbmFlow
from .mlp import Problem, uniform_time
from .rng import stream_key

_TAG_PICARD_G = b"Pg"
_TAG_PICARD_T = b"Pu"
_TAG_PICARD_W = b"Pw"


@dataclass(frozen=True)
class ReferenceValue:
    """A reference solution value with its method tag and error size."""

    value: float
    method: str
    error_estimate: float

    def __post_init__(self):
        if self.error_estimate < 0:
            raise UsageError("error estimate must be nonnegative")
        if self.method == "closed_form" and self.error_estimate != 0:
            raise UsageError("closed-form references carry zero error")


def terminal_mean(field_kind: str, g_kind: str, problem: Problem) -> float:
    """Closed-form E[g(X_{0,T}(xi))] for the supported field/payoff pairs."""
    T = problem.horizon
    xi = problem.start
    if g_kind == "constant":
        return problem.g(xi)
    if field_kind == "bm":
        if not isinstance(problem.field, BrownianFlow):
            raise UsageError("field_kind 'bm' requires a BrownianFlow problem")
        if g_kind == "sum_of_coordinates":
            return float(xi.sum())
        if g_kind == "squared_norm":
            return float(xi @ xi) + problem.dimension * T
    elif field_kind == "gbm":
        if not isinstance(problem.field, GbmFlow):
            raise UsageError("field_kind 'gbm' requires a GbmFlow problem")
        p = problem.field.params
        if g_kind == "sum_of_coordinates":
            return float(np.sum(xi * np.exp(p.alphas * T)))
        if g_kind == "squared_norm":
            return float(np.sum(xi**2 * np.exp((2.0 * p.alphas + p.betas**2) * T)))
    raise UsageError(f"unsupported (field, payoff) combination ({field_kind}, {g_kind})")


def linear_closed_form(
    c: float, field_kind: str, g_kind: str, problem: Problem
) -> ReferenceValue:
    """Exact u(0, xi) for the linear nonlinearity f(v) = c v."""
    mean = terminal_mean(field_kind, g_kind, problem)
    return ReferenceValue(
        value=math.exp(c * problem.horizon) * mean,
        method="closed_form",
        error_estimate=0.0,
    )


def linear_picard_mean(c: float, horizon: float, level: int, g_mean: float) -> float:
    """Mean of the level-n estimator for f(v) = c v.

    The estimator is unbiased for the n-th Picard iterate, which for linear f
    unrolls to E[g] * sum_{j<n} (cT)^j / j!.
    """
    if level < 0:
        raise UsageError("level must be >= 0")
    return g_mean * sum((c * horizon) ** j / math.factorial(j) for j in range(level))


def _fd_coefficients(problem: Problem):
    """(mu, sigma, to_state, center) of the 1-d working coordinates."""
    field = problem.field
    xi = float(problem.start[0])
    if isinstance(field, BrownianFlow):
        return 0.0, 1.0, (lambda y: y), xi
    if isinstance(field, GbmFlow):
        if xi <= 0:
            raise UsageError("GBM finite differences need a positive start point")
        p = field.params
        alpha, beta = float(p.alphas[0]), float(p.betas[0])
        return alpha - 0.5 * beta**2, abs(beta), (lambda y: np.exp(y)), math.log(xi)
    raise UsageError("finite differences support Brownian and GBM fields only")


def _fd_march(problem, mu, sigma, to_state, center, halfwidth, nodes, steps):
    T = problem.horizon
    y = np.linspace(center - halfwidth, center + halfwidth, nodes + 1)
    dy = y[1] - y[0]
    xs = to_state(y)
    grid_states = xs[:, None]  # row i is the d=1 state vector at node i
    u = np.array([problem.g(grid_states[i]) for i in range(nodes + 1)])
    dt = T / steps
    diff = 0.5 * sigma**2 / dy**2
    adv = mu / (2.0 * dy)
    f = problem.f
    bulk = getattr(f, "bulk_v", None)
    for k in range(steps):
        t_old = T - k * dt
        lap = u[2:] - 2.0 * u[1:-1] + u[:-2]
        grad = u[2:] - u[:-2]
        if bulk is not None:
            fv = bulk(t_old, u[1:-1])
        else:
            fv = np.array(
                [f(t_old, grid_states[i + 1], u[i + 1]) for i in range(nodes - 1)]
            )
        u[1:-1] = u[1:-1] + dt * (diff * lap + adv * grad + fv)
    return y, u


def fd_solve_1d(
    problem: Problem,
    halfwidth: float | None = None,
    space_nodes: int = 400,
    time_steps: int | None = None,
) -> ReferenceValue:
    """Backward explicit finite differences for the 1-d semilinear PDE.

    Marches u_t + 0.5 sigma^2 u_xx + mu u_x + f(t, x, u) = 0 from the terminal
    data down to t = 0 on a truncated domain with boundary values frozen at g.
    The reported error estimate is the Richardson difference between the
    ``space_nodes`` and 2x-refined solutions.
    """
    if problem.dimension != 1:
        raise UsageError("finite-difference oracle is 1-dimensional")
    if space_nodes < 50:
        raise UsageError("need at least 50 space nodes")
    mu, sigma, to_state, center = _fd_coefficients(problem)
    T = problem.horizon
    if halfwidth is None:
        halfwidth = 6.0 * max(sigma, 1e-8) * math.sqrt(T)
    lip = problem.f.lipschitz

    def required_steps(nodes: int) -> int:
        dy = 2.0 * halfwidth / nodes
        dt_max = 0.9 * dy**2 / (sigma**2 + abs(mu) * dy + lip * dy**2 + 1e-300)
        return max(1, math.ceil(T / dt_max))

    coarse_steps = required_steps(space_nodes)
    if time_steps is not None:
        if time_steps < coarse_steps:
            raise StabilityError(
                f"{time_steps} time steps violate the stability bound; "
                f"need at least {coarse_steps}",
                coarse_steps,
            )
        coarse_steps = time_steps

    fine_nodes = 2 * space_nodes
    fine_steps = max(4 * coarse_steps, required_steps(fine_nodes))

    target = center
    y_c, u_c = _fd_march(
        problem, mu, sigma, to_state, center, halfwidth, space_nodes, coarse_steps
    )
    y_f, u_f = _fd_march(
        problem, mu, sigma, to_state, center, halfwidth, fine_nodes, fine_steps
    )
    coarse = float(np.interp(target, y_c, u_c))
    fine = float(np.interp(target, y_f, u_f))
    return ReferenceValue(
        value=fine,
        method="finite_difference",
        error_estimate=abs(fine - coarse) / 3.0,
    )


def nested_picard(
    problem: Problem, depth: int, inner_samples: int, seed: int = 0
) -> ReferenceValue:
    """Plain Picard iterate U_depth(0, xi) by nested Monte Carlo.

    Every expectation (terminal and time-integral) is estimated with
    ``inner_samples`` draws, recursively, so the cost is inner_samples^depth;
    the guard rejects anything beyond depth 3 or 1000 samples.  The error
    estimate is the outer-level standard error only; the Picard truncation
    error is not folded in.
    """
    if depth < 0:
        raise UsageError("depth must be >= 0")
    if depth > 3:
        raise UsageError("nested Picard depth capped at 3 (cost S^k)")
    if inner_samples < 2 or inner_samples > 1000:
        raise UsageError("inner sample count must lie in [2, 1000]")
    if depth == 0:
        return ReferenceValue(0.0, "nested_picard", 0.0)

    field, f, g, T = problem.field, problem.f, problem.g, problem.horizon

    def iterate(k: int, t: float, x: np.ndarray, index: tuple) -> float:
        if k == 0:
            return 0.0
        g_acc = 0.0
        f_acc = 0.0
        for j in range(1, inner_samples + 1):
            idx = index + (k, j)
            x_term, _ = field.evaluate(t, T, x, stream_key(seed, idx, _TAG_PICARD_G))
            g_acc += g(x_term)
            r = uniform_time(t, T, stream_key(seed, idx, _TAG_PICARD_T))
            x_r, _ = field.evaluate(t, r, x, stream_key(seed, idx, _TAG_PICARD_W))
            f_acc += f(r, x_r, iterate(k - 1, r, x_r, idx))
        return g_acc / inner_samples + (T - t) * f_acc / inner_samples

    # top level kept explicit so the outer standard error can be reported
    g_vals = np.empty(inner_samples)
    f_vals = np.empty(inner_samples)
    xi = problem.start
    for j in range(1, inner_samples + 1):
        idx = (0, depth, j)
        x_term, _ = field.evaluate(0.0, T, xi, stream_key(seed, idx, _TAG_PICARD_G))
        g_vals[j - 1] = g(x_term)
        r = uniform_time(0.0, T, stream_key(seed, idx, _TAG_PICARD_T))
        x_r, _ = field.evaluate(0.0, r, xi, stream_key(seed, idx, _TAG_PICARD_W))
        f_vals[j - 1] = f(r, x_r, iterate(depth - 1, r, x_r, idx))
    value = float(g_vals.mean() + T * f_vals.mean())
    stderr = math.sqrt(
        g_vals.var(ddof=1) / inner_samples + T**2 * f_vals.var(ddof=1) / inner_samples
    )
    return ReferenceValue(value, "nested_picard", stderr)
