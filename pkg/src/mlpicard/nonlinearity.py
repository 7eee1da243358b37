"""Lipschitz nonlinearities f(t, x, v) with machine-checkable constants.

Every nonlinearity declares a Lipschitz constant in v and growth constants
(K, p, P) bounding |f(t, x, 0)| <= K d^P (1 + ||x||^p); the error-bound
formulas consume both.  Built-in kinds: "zero", "linear", "default_risk".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError


class Nonlinearity:
    """Base: evaluation via __call__(t, x, v), declared constants as attrs."""

    name = "user"

    def __init__(self, lipschitz: float, growth: tuple[float, float, float]):
        if lipschitz < 0:
            raise UsageError("Lipschitz constant must be nonnegative")
        self.lipschitz = float(lipschitz)
        self.growth = growth

    def __call__(self, t: float, x: np.ndarray, v: float) -> float:
        raise NotImplementedError


class ZeroNonlinearity(Nonlinearity):
    name = "zero"

    def __init__(self):
        super().__init__(0.0, (0.0, 0.0, 0.0))

    def __call__(self, t, x, v):
        return 0.0

    def bulk_v(self, t, v):
        return np.zeros_like(v)


class LinearNonlinearity(Nonlinearity):
    """f(t, x, v) = c v, Lipschitz with L = |c|."""

    name = "linear"

    def __init__(self, coefficient: float):
        super().__init__(abs(coefficient), (0.0, 0.0, 0.0))
        self.coefficient = float(coefficient)

    def __call__(self, t, x, v):
        return self.coefficient * v

    def bulk_v(self, t, v):
        return self.coefficient * v


def linear_f(coefficient: float) -> LinearNonlinearity:
    return LinearNonlinearity(coefficient)


@dataclass(frozen=True)
class DefaultRiskParams:
    """Parameters of the default-intensity pricing nonlinearity.

    ``rate`` is the discount rate R, ``recovery`` the fraction epsilon
    recovered on default, ``gamma_low < gamma_high`` the default intensities
    attained above/below the value thresholds ``v_high < v_low``.
    """

    rate: float
    recovery: float
    gamma_low: float
    gamma_high: float
    v_low: float
    v_high: float

    def __post_init__(self):
        if not (0.0 <= self.recovery < 1.0):
            raise UsageError("recovery fraction must lie in [0, 1)")
        if not (0.0 < self.gamma_low < self.gamma_high):
            raise UsageError("need 0 < gamma_low < gamma_high")
        if not (0.0 < self.v_high < self.v_low):
            raise UsageError("need 0 < v_high < v_low")
        if self.rate <= 0.0:
            raise UsageError("discount rate must be positive")


def intensity_clamp(params: DefaultRiskParams, u: float) -> float:
    """Piecewise-linear default intensity Q(u).

    Equals gamma_high for u <= v_high, gamma_low for u >= v_low, and
    interpolates linearly in between.
    """
    slope = (params.gamma_high - params.gamma_low) / (params.v_high - params.v_low)
    linear = slope * (u - params.v_high) + params.gamma_high
    return min(params.gamma_high, max(params.gamma_low, linear))


def default_risk_f(params: DefaultRiskParams, u: float) -> float:
    """f(u) = -R u - (1 - recovery) Q(u) u."""
    return -params.rate * u - (1.0 - params.recovery) * intensity_clamp(params, u) * u


def lipschitz_of_default_risk(params: DefaultRiskParams) -> float:
    """Certified upper bound on sup |f'| for the default-risk nonlinearity.

    On the outer branches f is linear with slope -(R + (1-eps) gamma); on the
    middle branch f is quadratic, so |f'| is maximized at an endpoint of
    [v_high, v_low].  The returned value is the max over all four candidates.
    """
    loss = 1.0 - params.recovery
    outer = params.rate + loss * params.gamma_high  # dominates the gamma_low branch
    a = (params.gamma_high - params.gamma_low) / (params.v_high - params.v_low)
    # middle branch: f(u) = -R u - loss (a (u - v_high) + gamma_high) u
    # f'(u) = -R - loss (2 a u - a v_high + gamma_high), linear in u
    def mid_slope(u):
        return -params.rate - loss * (2.0 * a * u - a * params.v_high + params.gamma_high)

    return max(outer, abs(mid_slope(params.v_high)), abs(mid_slope(params.v_low)))


class DefaultRiskNonlinearity(Nonlinearity):
    """Default-risk pricing nonlinearity; ignores (t, x)."""

    name = "default_risk"

    def __init__(self, params: DefaultRiskParams):
        super().__init__(lipschitz_of_default_risk(params), (0.0, 0.0, 0.0))
        self.params = params
        self._rate = params.rate
        self._loss = 1.0 - params.recovery
        self._glo = params.gamma_low
        self._ghi = params.gamma_high
        self._vhi = params.v_high
        self._slope = (params.gamma_high - params.gamma_low) / (
            params.v_high - params.v_low
        )

    def __call__(self, t, x, v):
        q = self._slope * (v - self._vhi) + self._ghi
        if q > self._ghi:
            q = self._ghi
        elif q < self._glo:
            q = self._glo
        return -(self._rate + self._loss * q) * v

    def bulk_v(self, t, v):
        q = np.clip(self._slope * (v - self._vhi) + self._ghi, self._glo, self._ghi)
        return -(self._rate + self._loss * q) * v


def make_nonlinearity(kind: str, **kwargs) -> Nonlinearity:
    """Instantiate a built-in nonlinearity by config key."""
    if kind == "zero":
        return ZeroNonlinearity()
    if kind == "linear":
        return LinearNonlinearity(kwargs.get("coefficient", 1.0))
    if kind == "default_risk":
        return DefaultRiskNonlinearity(DefaultRiskParams(**kwargs))
    raise UsageError(f"unknown nonlinearity kind {kind!r}")


def validate_nonlinearity(
    f: Nonlinearity,
    dimension: int,
    horizon: float,
    seed: int = 0,
    points: int = 10_000,
    v_scale: float = 10.0,
    x_scale: float = 4.0,
) -> None:
    """Spot-check the declared Lipschitz and growth constants on a random grid.

    Raises UsageError on the first violated inequality (no slack on the
    Lipschitz side beyond float rounding).
    """
    gen = np.random.default_rng(seed)
    k, p, big_p = f.growth
    dfac = float(dimension) ** big_p
    for _ in range(points):
        t = float(gen.uniform(0.0, horizon))
        x = gen.normal(0.0, x_scale, dimension)
        v, w = gen.normal(0.0, v_scale, 2)
        gap = abs(f(t, x, v) - f(t, x, w))
        allowed = f.lipschitz * abs(v - w)
        if gap > allowed * (1.0 + 1e-12) + 1e-12:
            raise UsageError(
                f"Lipschitz violation at t={t:.4f}, v={v:.4f}, w={w:.4f}: "
                f"{gap} > {allowed}"
            )
        base = abs(f(t, x, 0.0))
        norm = float(np.linalg.norm(x))
        if base > k * dfac * (1.0 + norm**p) + 1e-12:
            raise UsageError(
                f"growth violation at t={t:.4f}: |f(t,x,0)|={base} exceeds bound"
            )
