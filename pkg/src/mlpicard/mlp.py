"""Full-history recursive multilevel Picard estimator.

The level-n estimator of the stochastic fixed-point solution u(t, x) averages
M^n terminal samples and, for every previous level k < n, M^(n-k) sampled
nonlinearity corrections

    g-average  +  sum_k (T-t)/M^(n-k) * sum_m [ f(R, X, V_k) - f(R, X, V_{k-1}) ],

where each (k, m) node draws one proxy time R uniform on [t, T] and one field
evaluation X at R, shared by both f-terms of the node, and recurses with
fresh multi-indices.  Levels n <= 0 are identically zero.

Every field evaluation charges its draw count to the per-call cost ledger;
every proxy-time draw charges one uniform.  The ledger total reproduces the
closed-form cost recursion in :mod:`mlpicard.bounds` exactly.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, UsageError
from .fields import FlowField
from .nonlinearity import Nonlinearity
from .rng import ROOT, TAG_FIELD, TAG_TIME, MultiIndex, root_index, stream_key, uniform01

MAX_UNGUARDED_LEVEL = 10


@dataclass
class CostLedger:
    """Running count of scalar random draws consumed by one estimator call.

    ``normal_draws`` counts standard normals (d per exact-field evaluation),
    ``uniform_draws`` the proxy-time uniforms; the cost recursion of the
    convergence theory prices both at one scalar each, so ``total_draws`` is
    the quantity compared against ``bounds.cost_formula``.
    """

    normal_draws: int = 0
    uniform_draws: int = 0

    @property
    def total_draws(self) -> int:
        return self.normal_draws + self.uniform_draws


@dataclass(frozen=True)
class MlpParams:
    """Estimator knobs: per-level sample base M and recursion level n."""

    samples_base: int
    level: int

    def __post_init__(self):
        if self.samples_base < 1:
            raise UsageError("samples base M must be >= 1")
        if self.level < -1:
            raise UsageError("level must be >= -1")


class TerminalCondition:
    """Terminal condition g with declared growth constants (K, p, P)."""

    kind = "user"

    def __init__(self, growth: tuple[float, float, float]):
        self.growth = growth

    def __call__(self, x: np.ndarray) -> float:
        raise NotImplementedError


class SquaredNormTerminal(TerminalCondition):
    kind = "squared_norm"

    def __init__(self):
        super().__init__((1.0, 2.0, 0.0))

    def __call__(self, x):
        return float(x @ x)


class SumTerminal(TerminalCondition):
    kind = "sum_of_coordinates"

    def __init__(self):
        super().__init__((1.0, 1.0, 0.5))

    def __call__(self, x):
        return float(x.sum())


class ConstantTerminal(TerminalCondition):
    kind = "constant"

    def __init__(self, value: float):
        super().__init__((abs(float(value)), 0.0, 0.0))
        self.value = float(value)

    def __call__(self, x):
        return self.value


class CappedMinTerminal(TerminalCondition):
    """g(x) = min(min_i x_i, cap), a bounded-above payoff."""

    kind = "min_capped"

    def __init__(self, cap: float):
        super().__init__((max(abs(float(cap)), 1.0), 1.0, 0.0))
        self.cap = float(cap)

    def __call__(self, x):
        m = float(x.min())
        return m if m < self.cap else self.cap


def make_terminal(kind: str, **kwargs) -> TerminalCondition:
    if kind == "squared_norm":
        return SquaredNormTerminal()
    if kind == "sum_of_coordinates":
        return SumTerminal()
    if kind == "constant":
        return ConstantTerminal(kwargs.get("value", 1.0))
    if kind == "min_capped":
        return CappedMinTerminal(kwargs.get("cap", 100.0))
    raise UsageError(f"unknown terminal condition kind {kind!r}")


@dataclass(frozen=True)
class Problem:
    """One semilinear PDE instance: dynamics, nonlinearity, terminal data."""

    dimension: int
    horizon: float
    start: np.ndarray
    field: FlowField
    f: Nonlinearity
    g: TerminalCondition

    def __post_init__(self):
        start = np.asarray(self.start, dtype=float)
        if start.shape != (self.dimension,):
            raise UsageError(
                f"start point has shape {start.shape}, expected ({self.dimension},)"
            )
        if self.field.dimension != self.dimension:
            raise UsageError(
                f"field dimension {self.field.dimension} != problem dimension "
                f"{self.dimension}"
            )
        if self.horizon <= 0:
            raise UsageError("horizon must be positive")
        object.__setattr__(self, "start", start)

    def validate_terminal_growth(self, seed: int = 0, points: int = 2000) -> None:
        """Spot-check |g(x)| <= K d^P (1 + ||x||^p) on a random grid."""
        k, p, big_p = self.g.growth
        dfac = float(self.dimension) ** big_p
        gen = np.random.default_rng(seed)
        for _ in range(points):
            x = gen.normal(0.0, 4.0, self.dimension)
            if abs(self.g(x)) > k * dfac * (1.0 + np.linalg.norm(x) ** p) + 1e-12:
                raise UsageError("terminal condition violates its growth bound")


def uniform_time(t: float, horizon: float, key) -> float:
    """Proxy time t + (T - t) U with U the key's first uniform."""
    if t > horizon:
        raise UsageError(f"t={t} exceeds horizon {horizon}")
    return t + (horizon - t) * uniform01(key, 0)


def mlp_value(
    problem: Problem,
    params: MlpParams,
    t: float,
    x: np.ndarray,
    theta: MultiIndex = ROOT,
    ledger: CostLedger | None = None,
    *,
    seed: int,
) -> float:
    """One realization of the level-n estimator V_{M,n}(t, x) rooted at theta.

    Pure function of (problem, params, t, x, theta, seed).  Raises
    NonFiniteError as soon as any node value turns non-finite.
    """
    T = problem.horizon
    if not 0.0 <= t <= T:
        raise UsageError(f"t={t} outside [0, {T}]")
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.dimension,):
        raise UsageError(
            f"evaluation point has shape {x.shape}, expected ({problem.dimension},)"
        )
    if not np.all(np.isfinite(x)):
        raise UsageError("evaluation point must be finite")
    if not problem.field.exact and params.level >= 1:
        warnings.warn(
            "field is not an exact solution flow; the convergence theory "
            "assumes exact fields, results carry an unanalyzed bias",
            RuntimeWarning,
            stacklevel=2,
        )
    if ledger is None:
        ledger = CostLedger()
    theta = tuple(theta)
    if len(theta) == 0:
        raise UsageError("root multi-index must have length >= 1")
    return _walk(
        problem.field.evaluate,
        problem.f,
        problem.g,
        T,
        params.samples_base,
        params.level,
        t,
        x,
        theta,
        ledger,
        seed,
    )


def _walk(field_eval, f, g, T, M, n, t, x, theta, ledger, seed):
    if n <= 0:
        return 0.0
    isfinite = math.isfinite
    mn = M**n
    # running mean: exact when all terminal samples coincide (the t = T case)
    total = 0.0
    for m in range(1, mn + 1):
        key = stream_key(seed, theta + (n, -m), TAG_FIELD)
        x_term, draws = field_eval(t, T, x, key)
        ledger.normal_draws += draws
        total += (g(x_term) - total) / m
    count = mn
    for k in range(n):
        # level k is sampled M^(n-k) times
        acc = 0.0
        for m in range(1, count + 1):
            idx = theta + (k, m)
            r = t + (T - t) * uniform01(stream_key(seed, idx, TAG_TIME), 0)
            ledger.uniform_draws += 1
            x_r, draws = field_eval(t, r, x, stream_key(seed, idx, TAG_FIELD))
            ledger.normal_draws += draws
            v_new = _walk(field_eval, f, g, T, M, k, r, x_r, idx, ledger, seed)
            term = f(r, x_r, v_new)
            if k:
                v_old = _walk(
                    field_eval, f, g, T, M, k - 1, r, x_r, theta + (k, -m), ledger, seed
                )
                term -= f(r, x_r, v_old)
            acc += term
        total += (T - t) * acc / count
        count //= M
        if not isfinite(total):
            raise NonFiniteError(
                f"estimator value turned non-finite at node {theta}, level "
                f"group k={k} (t={t}, n={n}, M={M})"
            )
    return total


def _replicate(args):
    problem, params, t, x, j, seed = args
    return mlp_value(problem, params, t, x, root_index(j), CostLedger(), seed=seed)


def mlp_replicates(
    problem: Problem,
    params: MlpParams,
    t: float,
    x: np.ndarray,
    count: int,
    base_seed: int,
    workers: int = 1,
) -> np.ndarray:
    """Independent estimator replicates rooted at multi-indices (1) .. (K).

    The result is ordered by root index and identical for every worker count.
    """
    if count < 1:
        raise UsageError("replicate count must be >= 1")
    jobs = [(problem, params, t, x, j, base_seed) for j in range(1, count + 1)]
    if workers <= 1:
        return np.array([_replicate(job) for job in jobs])
    with ProcessPoolExecutor(max_workers=workers) as pool:
        chunk = max(1, count // (4 * workers))
        return np.array(list(pool.map(_replicate, jobs, chunksize=chunk)))
