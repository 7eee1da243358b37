"""Closed-form error and cost bounds for the multilevel Picard scheme.

The a-priori L2 error of the level-n estimator with sample base M is
C (1 + 2LT)^n exp(M/2) / M^(n/2), where the problem constant C collects the
second moments of the terminal condition and of the nonlinearity at v = 0
along the flow.  The diagonal choice M = n = N turns this into
C (sqrt(e)(1 + 2LT) / sqrt(N))^N, which decays superexponentially once
sqrt(N) clears sqrt(e)(1 + 2LT).

Cost is modelled by the recursion (taken with equality)

    cost(0) = 0,
    cost(n) = alpha d M^n + sum_k M^(n-k) (alpha d + 1 + cost(k) + 1_{k>=1} cost(k-1)),

i.e. alpha d scalar draws per field evaluation plus one per proxy-time
uniform, and is bounded by alpha d (5M)^n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import LevelCapError, NonFiniteError, UsageError
from .mlp import Problem
from .rng import stream_key

_TAG_GTERM = b"Cg"
_TAG_FTERM = b"Cf"


@dataclass(frozen=True)
class ErrorConstant:
    """Monte Carlo estimate of the error constant C and its components.

    ``g_sq_mean`` estimates E|g(X_{0,T}(xi))|^2 and ``f_int_mean`` the time
    integral of E|f(t, X_{0,t}(xi), 0)|^2; standard errors of both are kept
    so confidence-inflated variants of C can be formed.
    """

    value: float
    g_term: float
    f_term: float
    lipschitz: float
    horizon: float
    sample_count: int
    g_sq_mean: float
    g_sq_stderr: float
    f_int_mean: float
    f_int_stderr: float

    def inflated(self, z: float = 5.0) -> float:
        """C recomputed with both squared-moment estimates raised by z stderr."""
        g_term = math.sqrt(self.g_sq_mean + z * self.g_sq_stderr)
        f_term = math.sqrt(self.horizon) * math.sqrt(
            max(self.f_int_mean + z * self.f_int_stderr, 0.0)
        )
        return (g_term + f_term) * math.exp(self.lipschitz * self.horizon)


def estimate_error_constant(
    problem: Problem,
    samples: int = 10_000,
    time_nodes: int = 16,
    seed: int = 0,
) -> ErrorConstant:
    """Estimate C by plain Monte Carlo along the problem's own flow.

    The terminal moment uses ``samples`` field draws; the time integral is a
    midpoint rule on ``time_nodes`` nodes with ``samples`` draws each, all on
    dedicated key families disjoint from estimator replicates.
    """
    if samples < 100:
        raise UsageError("need at least 100 samples")
    if time_nodes < 4:
        raise UsageError("need at least 4 time nodes")
    T = problem.horizon
    xi = problem.start
    lip = problem.f.lipschitz

    xs, _ = problem.field.evaluate_batch(0.0, T, xi, stream_key(seed, (-1,), _TAG_GTERM), samples)
    g_sq = np.array([problem.g(row) for row in xs]) ** 2
    g_sq_mean = float(g_sq.mean())
    g_sq_stderr = float(g_sq.std(ddof=1) / math.sqrt(samples))

    node_means = np.empty(time_nodes)
    node_vars = np.empty(time_nodes)
    for q in range(time_nodes):
        t_q = (q + 0.5) * T / time_nodes
        key = stream_key(seed, (-2, q), _TAG_FTERM)
        xq, _ = problem.field.evaluate_batch(0.0, t_q, xi, key, samples)
        f_sq = np.array([problem.f(t_q, row, 0.0) for row in xq]) ** 2
        node_means[q] = f_sq.mean()
        node_vars[q] = f_sq.var(ddof=1)
    f_int_mean = float((T / time_nodes) * node_means.sum())
    f_int_stderr = float((T / time_nodes) * math.sqrt(node_vars.sum() / samples))

    if not (math.isfinite(g_sq_mean) and math.isfinite(f_int_mean)):
        raise NonFiniteError(
            "non-finite sample while estimating the error constant "
            f"(g_sq={g_sq_mean}, f_int={f_int_mean})"
        )

    g_term = math.sqrt(g_sq_mean)
    f_term = math.sqrt(T) * math.sqrt(f_int_mean)
    value = (g_term + f_term) * math.exp(lip * T)
    return ErrorConstant(
        value=value,
        g_term=g_term,
        f_term=f_term,
        lipschitz=lip,
        horizon=T,
        sample_count=samples,
        g_sq_mean=g_sq_mean,
        g_sq_stderr=g_sq_stderr,
        f_int_mean=f_int_mean,
        f_int_stderr=f_int_stderr,
    )


def a_priori_error(
    c: float, lipschitz: float, horizon: float, samples_base: int, level: int
) -> float:
    """L2 error bound C (1 + 2LT)^n exp(M/2) / M^(n/2)."""
    if samples_base < 1:
        raise UsageError("samples base M must be >= 1")
    if level < 0:
        raise UsageError("level must be >= 0")
    growth = (1.0 + 2.0 * lipschitz * horizon) ** level
    return c * growth * math.exp(samples_base / 2.0) / samples_base ** (level / 2.0)


def diagonal_error(c: float, lipschitz: float, horizon: float, level: int) -> float:
    """Diagonal (M = n = N) error bound C (sqrt(e)(1 + 2LT)/sqrt(N))^N."""
    if level < 1:
        raise UsageError("diagonal level must be >= 1")
    ratio = math.sqrt(math.e) * (1.0 + 2.0 * lipschitz * horizon) / math.sqrt(level)
    return c * ratio**level


def cost_formula(dimension: int, samples_base: int, level: int, alpha: float = 1):
    """Scalar-draw count of one estimator realization, recursion with equality.

    Exact integer arithmetic for integer alpha; the count explodes like
    (5M)^n, so callers enforcing budgets should compare before running.
    """
    if dimension < 1 or samples_base < 1:
        raise UsageError("dimension and samples base must be >= 1")
    if level < 0:
        raise UsageError("level must be >= 0")
    if alpha < 1:
        raise UsageError("alpha must be >= 1")
    d, m = dimension, samples_base
    if float(alpha).is_integer():
        alpha = int(alpha)
    per_eval = alpha * d
    costs = [0]
    for j in range(1, level + 1):
        total = per_eval * m**j
        for k in range(j):
            sub = costs[k] + (costs[k - 1] if k >= 1 else 0)
            total += m ** (j - k) * (per_eval + 1 + sub)
        costs.append(total)
    return costs[level]


def cost_bound(dimension: int, samples_base: int, level: int, alpha: float = 1) -> float:
    """Closed-form cost cap alpha d (5M)^n."""
    if dimension < 1 or samples_base < 1 or level < 1:
        raise UsageError("dimension, samples base and level must be >= 1")
    if alpha < 1:
        raise UsageError("alpha must be >= 1")
    return alpha * dimension * float(5 * samples_base) ** level


def select_level(
    c: float,
    lipschitz: float,
    horizon: float,
    epsilon: float,
    max_level: int = 12,
) -> int:
    """Smallest diagonal level N with diagonal_error(C, L, T, N) <= epsilon.

    Linear scan from N = 1; raises LevelCapError carrying the best achievable
    bound when the cap is hit first.
    """
    if epsilon <= 0:
        raise UsageError("epsilon must be positive")
    if c < 0:
        raise UsageError("error constant must be nonnegative")
    best = math.inf
    for n in range(1, max_level + 1):
        bound = diagonal_error(c, lipschitz, horizon, n)
        best = min(best, bound)
        if bound <= epsilon:
            return n
    raise LevelCapError(
        f"no level <= {max_level} reaches epsilon={epsilon}; best bound {best}",
        max_level,
        best,
    )
