"""Solution fields of the forward SDE.

A flow field maps (t, s, x, key) to the SDE solution started from x at time t
and evaluated at time s, together with the number of standard-normal draws the
evaluation consumed.  Three implementations are provided:

* :class:`BrownianFlow` -- arithmetic Brownian motion, exact one-step sampling
  (the semilinear heat equation case),
* :class:`GbmFlow` -- correlated geometric Brownian motion, exact one-step
  sampling (the semilinear Black-Scholes case),
* :class:`EulerMaruyamaFlow` -- equidistant Euler-Maruyama stepping for
  general drift/diffusion coefficients (strong order 1/2, not exact).

Every evaluation charges its full draw count even in the degenerate s == t
case, so measured cost matches the closed-form cost recursion in
:mod:`mlpicard.bounds`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .errors import UsageError
from .rng import StreamKey, std_normals


class FlowField(Protocol):
    """Evaluation contract shared by all solution fields."""

    dimension: int
    exact: bool

    def evaluate(
        self, t: float, s: float, x: np.ndarray, key: StreamKey
    ) -> tuple[np.ndarray, int]: ...

    def evaluate_batch(
        self, t: float, s: float, x: np.ndarray, key: StreamKey, count: int
    ) -> tuple[np.ndarray, int]: ...


def _check_interval(t: float, s: float) -> None:
    if t < 0.0:
        raise UsageError(f"start time must be >= 0, got t={t}")
    if s < t:
        raise UsageError(f"evaluation time {s} precedes start time {t}")


class BrownianFlow:
    """Exact flow x + W_s - W_t of d-dimensional standard Brownian motion."""

    exact = True

    def __init__(self, dimension: int):
        if dimension < 1:
            raise UsageError("dimension must be >= 1")
        self.dimension = dimension

    def evaluate(self, t, s, x, key):
        _check_interval(t, s)
        z = std_normals(key, 0, self.dimension)
        return x + math.sqrt(s - t) * z, self.dimension

    def evaluate_batch(self, t, s, x, key, count):
        _check_interval(t, s)
        d = self.dimension
        z = std_normals(key, 0, count * d).reshape(count, d)
        return np.asarray(x) + math.sqrt(s - t) * z, count * d

    def endpoint_from_increment(self, t, s, x, dw):
        """Endpoint given the total Brownian increment W_s - W_t (coupling)."""
        return np.asarray(x) + dw


@dataclass(frozen=True)
class GbmParams:
    """Per-coordinate GBM rates and the correlating column matrix.

    ``sigma_cols`` holds the unit-norm columns zeta_i; coordinate i of the
    flow is driven by the projection of the shared d-dimensional increment
    onto zeta_i.  ``kappa`` is the declared cap on max(|alpha_i|, beta_i^2),
    consumed by the moment-bound formulas.
    """

    alphas: np.ndarray
    betas: np.ndarray
    sigma_cols: np.ndarray
    kappa: float = field(default=0.0)

    def __post_init__(self):
        alphas = np.atleast_1d(np.asarray(self.alphas, dtype=float))
        betas = np.atleast_1d(np.asarray(self.betas, dtype=float))
        d = alphas.shape[0]
        if betas.shape != (d,):
            raise UsageError("alphas and betas must have equal length")
        cols = self.sigma_cols
        if cols is None:
            cols = np.eye(d)
        cols = np.asarray(cols, dtype=float)
        if cols.shape != (d, d):
            raise UsageError(f"sigma_cols must be {d}x{d}, got {cols.shape}")
        norms = np.linalg.norm(cols, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise UsageError(
                f"sigma columns must have unit norm, offsets {norms - 1.0}"
            )
        kappa = self.kappa
        declared = float(max(np.max(np.abs(alphas)), np.max(betas**2)))
        if kappa <= 0.0:
            kappa = declared
        elif declared > kappa:
            raise UsageError(
                f"max(|alpha|, beta^2) = {declared} exceeds declared kappa {kappa}"
            )
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "sigma_cols", cols)
        object.__setattr__(self, "kappa", kappa)

    @property
    def dimension(self) -> int:
        return self.alphas.shape[0]

    @classmethod
    def uncorrelated(cls, alpha: float, beta: float, dimension: int) -> "GbmParams":
        """Equal rates in every coordinate, identity correlation."""
        return cls(
            alphas=np.full(dimension, float(alpha)),
            betas=np.full(dimension, float(beta)),
            sigma_cols=np.eye(dimension),
        )


class GbmFlow:
    """Exact flow of correlated geometric Brownian motion.

    Coordinate i of the endpoint is
    x_i * exp((alpha_i - beta_i^2/2)(s-t) + beta_i <zeta_i, W_s - W_t>)
    with one shared d-dimensional increment per evaluation.
    """

    exact = True

    def __init__(self, params: GbmParams):
        self.params = params
        self.dimension = params.dimension
        self._drift = params.alphas - 0.5 * params.betas**2
        self._betas = params.betas
        # identity Sigma skips the projection matmul on the hot path
        self._proj = None
        if not np.array_equal(params.sigma_cols, np.eye(self.dimension)):
            self._proj = params.sigma_cols.T

    def evaluate(self, t, s, x, key):
        _check_interval(t, s)
        d = self.dimension
        z = std_normals(key, 0, d)
        dw = math.sqrt(s - t) * z
        return self.endpoint_from_increment(t, s, x, dw), d

    def evaluate_batch(self, t, s, x, key, count):
        _check_interval(t, s)
        d = self.dimension
        z = std_normals(key, 0, count * d).reshape(count, d)
        dw = math.sqrt(s - t) * z
        return self.endpoint_from_increment(t, s, x, dw), count * d

    def endpoint_from_increment(self, t, s, x, dw):
        """Endpoint given the total Brownian increment (vectorized over rows)."""
        if self._proj is not None:
            dw = dw @ self._proj.T if np.ndim(dw) > 1 else self._proj @ dw
        return np.asarray(x) * np.exp(self._drift * (s - t) + self._betas * dw)


@dataclass(frozen=True)
class SdeCoefficients:
    """Drift/diffusion pair with declared Lipschitz and growth constants.

    ``mu(t, x) -> (d,)`` and ``sigma(t, x) -> (d, m)``.  The one-sided growth
    bound max(<x, mu(t,x)>, ||sigma(t,x)||_F^2) <= c1 + c2 ||x||^2 must hold;
    ``validate_growth`` spot-checks it on a random grid.
    """

    mu: Callable[[float, np.ndarray], np.ndarray]
    sigma: Callable[[float, np.ndarray], np.ndarray]
    noise_dim: int
    lipschitz: float
    growth: tuple[float, float]

    def validate_growth(
        self,
        dimension: int,
        horizon: float,
        seed: int = 0,
        points: int = 256,
        scale: float = 4.0,
    ) -> None:
        c1, c2 = self.growth
        gen = np.random.default_rng(seed)
        times = gen.uniform(0.0, horizon, points)
        xs = gen.normal(0.0, scale, (points, dimension))
        for ti, xi in zip(times, xs):
            lhs = max(
                float(xi @ self.mu(ti, xi)),
                float(np.sum(self.sigma(ti, xi) ** 2)),
            )
            if lhs > c1 + c2 * float(xi @ xi) + 1e-9:
                raise UsageError(
                    f"growth bound violated at t={ti:.4f}: {lhs} > "
                    f"{c1} + {c2}*||x||^2"
                )


def gbm_coefficients(params: GbmParams) -> SdeCoefficients:
    """Drift/diffusion functions of the GBM field, for Euler-Maruyama runs.

    Both functions broadcast over leading axes: x of shape (..., d) yields
    mu of shape (..., d) and sigma of shape (..., d, d).
    """
    cols_t = params.sigma_cols.T
    alphas, betas = params.alphas, params.betas

    def mu(t, x):
        return alphas * x

    def sigma(t, x):
        return (betas * x)[..., :, None] * cols_t

    lip = float(max(np.max(np.abs(alphas)), np.max(np.abs(betas))))
    return SdeCoefficients(
        mu=mu,
        sigma=sigma,
        noise_dim=params.dimension,
        lipschitz=lip,
        growth=(0.0, params.kappa),
    )


class EulerMaruyamaFlow:
    """Equidistant Euler-Maruyama stepping for general coefficients.

    Not an exact field: the multilevel estimator accepts it but warns that the
    convergence theory assumes exact solution fields.
    """

    exact = False

    def __init__(self, coef: SdeCoefficients, dimension: int, steps: int):
        if steps < 1:
            raise UsageError("step count must be >= 1")
        if dimension < 1:
            raise UsageError("dimension must be >= 1")
        self.coef = coef
        self.dimension = dimension
        self.steps = steps

    def evaluate(self, t, s, x, key):
        _check_interval(t, s)
        n, m = self.steps, self.coef.noise_dim
        z = std_normals(key, 0, n * m).reshape(n, m)
        h = (s - t) / n
        sqh = math.sqrt(h)
        y = np.array(x, dtype=float, copy=True)
        mu, sigma = self.coef.mu, self.coef.sigma
        for j in range(n):
            tj = t + j * h
            y = y + mu(tj, y) * h + sigma(tj, y) @ (sqh * z[j])
        return y, n * m

    def evaluate_batch(self, t, s, x, key, count):
        """Per-sample sequential stepping; draws count*steps*noise_dim."""
        n, m = self.steps, self.coef.noise_dim
        x = np.asarray(x, dtype=float)
        out = np.empty((count, self.dimension))
        total = 0
        for j in range(count):
            xj = x[j] if x.ndim > 1 else x
            out[j], draws = self._evaluate_offset(t, s, xj, key, j * n * m)
            total += draws
        return out, total

    def _evaluate_offset(self, t, s, x, key, ordinal):
        _check_interval(t, s)
        n, m = self.steps, self.coef.noise_dim
        z = std_normals(key, ordinal, n * m).reshape(n, m)
        h = (s - t) / n
        sqh = math.sqrt(h)
        y = np.array(x, dtype=float, copy=True)
        mu, sigma = self.coef.mu, self.coef.sigma
        for j in range(n):
            tj = t + j * h
            y = y + mu(tj, y) * h + sigma(tj, y) @ (sqh * z[j])
        return y, n * m


def moment_bound(
    p: float, c1: float, c2: float, horizon: float, xi_norm: float
) -> float:
    """A-priori bound on E||X_T||^p under the one-sided growth condition.

    max(T, 1) * ((1 + ||xi||^2)^(p/2) + (p+1) c1^(p/2)) * exp(p(p+3)(1+c2)T/2),
    with 0^0 read as 1 so the p = 0 case degenerates gracefully.
    """
    if p < 0 or c1 < 0 or c2 < 0 or xi_norm < 0:
        raise UsageError("moment_bound arguments must be nonnegative")
    if horizon <= 0:
        raise UsageError("horizon must be positive")
    lead = max(horizon, 1.0)
    poly = (1.0 + xi_norm**2) ** (p / 2.0) + (p + 1.0) * c1 ** (p / 2.0)
    return lead * poly * math.exp(p * (p + 3.0) * (1.0 + c2) * horizon / 2.0)
