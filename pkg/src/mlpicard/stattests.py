"""Reusable statistical checks for the distributional claims of the scheme.

All moment comparisons are CLT-calibrated: a check passes when the statistic
sits within z_threshold standard errors of its target.  At the default
z_threshold = 5 each check has false-failure probability below 1e-6 under the
null, so a suite of a few hundred checks stays comfortably below one expected
spurious failure per thousand runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import ks_2samp

from .errors import UsageError
from .fields import SdeCoefficients
from .mlp import MlpParams, Problem, mlp_replicates
from .nonlinearity import LinearNonlinearity
from .oracles import linear_picard_mean
from .rng import std_normals, stream_key

_TAG_FLOW_MID = b"S1"
_TAG_FLOW_TOP = b"S2"
_TAG_FLOW_DIRECT = b"S3"
_TAG_EM = b"SE"


@dataclass(frozen=True)
class CltVerdict:
    """Outcome of one moment comparison."""

    name: str
    statistic: float
    target: float
    stderr: float
    z_threshold: float = 5.0

    @property
    def z_score(self) -> float:
        if self.stderr == 0.0:
            return 0.0 if self.statistic == self.target else math.inf
        return abs(self.statistic - self.target) / self.stderr

    @property
    def passed(self) -> bool:
        return abs(self.statistic - self.target) <= self.z_threshold * self.stderr


def flow_property_test(
    field,
    t: float,
    s: float,
    r: float,
    x: np.ndarray,
    samples: int,
    seed: int,
    z_threshold: float = 5.0,
    second_leg_field=None,
    include_ks: bool = False,
) -> list[CltVerdict]:
    """Compare the composed flow X_{s,r}(X_{t,s}(x)) against the direct X_{t,r}(x).

    Per coordinate, the first and second sample moments of both routes are
    compared at z_threshold sigma.  Passing ``second_leg_field`` substitutes a
    different field for the outer leg; a deliberately mismatched one serves as
    the negative control.  ``include_ks`` adds a two-sample KS verdict per
    coordinate (d = 1 oriented; pass means p >= 1e-6).
    """
    if not 0.0 <= t <= s <= r:
        raise UsageError("need 0 <= t <= s <= r")
    if samples < 10_000:
        raise UsageError("flow test needs at least 1e4 samples")
    leg2 = second_leg_field if second_leg_field is not None else field
    mid, _ = field.evaluate_batch(t, s, x, stream_key(seed, (-3,), _TAG_FLOW_MID), samples)
    composed, _ = leg2.evaluate_batch(s, r, mid, stream_key(seed, (-3,), _TAG_FLOW_TOP), samples)
    direct, _ = field.evaluate_batch(t, r, x, stream_key(seed, (-3,), _TAG_FLOW_DIRECT), samples)
    verdicts = []
    for i in range(field.dimension):
        for moment in (1, 2):
            a = composed[:, i] ** moment
            b = direct[:, i] ** moment
            stderr = math.sqrt((a.var(ddof=1) + b.var(ddof=1)) / samples)
            verdicts.append(
                CltVerdict(
                    name=f"flow[coord{i},m{moment}]",
                    statistic=float(a.mean()),
                    target=float(b.mean()),
                    stderr=stderr,
                    z_threshold=z_threshold,
                )
            )
        if include_ks:
            stat, pvalue = ks_2samp(composed[:, i], direct[:, i])
            verdicts.append(
                CltVerdict(
                    name=f"flow-ks[coord{i}]",
                    statistic=float(pvalue),
                    target=1.0,
                    stderr=(1.0 - 1e-6) / z_threshold,
                    z_threshold=z_threshold,
                )
            )
    return verdicts


@dataclass(frozen=True)
class EmRateResult:
    """Strong-error regression of Euler-Maruyama against the exact flow."""

    step_counts: tuple
    rms_errors: tuple
    rms_stderrs: tuple
    slope: float
    deterministic: bool

    @property
    def applicable(self) -> bool:
        return not self.deterministic

    @property
    def passed(self) -> bool:
        # deterministic dynamics converge at first order; the 1/2-order
        # verdict only applies to genuinely stochastic coefficients
        if self.deterministic:
            return True
        return 0.4 <= self.slope <= 0.6


def em_rate_test(
    coef: SdeCoefficients,
    exact_field,
    t: float,
    s: float,
    x: np.ndarray,
    step_counts,
    paths: int,
    seed: int,
) -> EmRateResult:
    """Regress the coupled EM strong error against the step size.

    For each step count the EM chain and the exact endpoint share one
    Brownian path: the exact flow consumes the summed per-substep increments.
    Coefficient functions must broadcast over a leading path axis.
    """
    step_counts = sorted(int(n) for n in step_counts)
    if len(step_counts) < 4:
        raise UsageError("need at least 4 step counts")
    if step_counts[-1] < 8 * step_counts[0]:
        raise UsageError("step counts must span at least 3 octaves")
    d = exact_field.dimension
    m = coef.noise_dim
    x = np.asarray(x, dtype=float)
    probe = coef.sigma(t, np.tile(x, (2, 1)))
    deterministic = bool(np.all(probe == 0.0))

    rms, ses, hs = [], [], []
    for n in step_counts:
        key = stream_key(seed, (-4, n), _TAG_EM)
        h = (s - t) / n
        z = std_normals(key, 0, paths * n * m).reshape(paths, n, m)
        dw = math.sqrt(h) * z
        y = np.tile(x, (paths, 1))
        for j in range(n):
            tj = t + j * h
            drift = coef.mu(tj, y) * h
            shock = np.einsum("...dm,...m->...d", coef.sigma(tj, y), dw[:, j, :])
            y = y + drift + shock
        exact = exact_field.endpoint_from_increment(t, s, np.tile(x, (paths, 1)), dw.sum(axis=1))
        sq = np.sum((y - exact) ** 2, axis=1)
        mse = float(sq.mean())
        rmse = math.sqrt(mse)
        se_mse = float(sq.std(ddof=1) / math.sqrt(paths))
        rms.append(rmse)
        ses.append(se_mse / (2.0 * rmse) if rmse > 0 else 0.0)
        hs.append(h)
    slope = float(np.polyfit(np.log(hs), np.log(rms), 1)[0])
    return EmRateResult(
        step_counts=tuple(step_counts),
        rms_errors=tuple(rms),
        rms_stderrs=tuple(ses),
        slope=slope,
        deterministic=deterministic,
    )


def mean_identity_test(
    problem: Problem,
    samples_base: int,
    level: int,
    replicates: int,
    seed: int,
    g_mean: float,
    z_threshold: float = 5.0,
    target_override: float | None = None,
    workers: int = 1,
) -> CltVerdict:
    """Check E[V_{M,n}(0, xi)] against the unrolled Picard mean for linear f.

    ``g_mean`` is the exact E[g(X_{0,T}(xi))] (closed form from the oracle
    module).  ``target_override`` substitutes a wrong target, which is how the
    negative control is driven.
    """
    if not isinstance(problem.f, LinearNonlinearity):
        raise UsageError("mean identity test requires a linear nonlinearity")
    if level not in (1, 2):
        raise UsageError("mean identity test covers levels 1 and 2")
    if replicates < 1000:
        raise UsageError("need at least 1e3 replicates")
    c = problem.f.coefficient
    target = (
        target_override
        if target_override is not None
        else linear_picard_mean(c, problem.horizon, level, g_mean)
    )
    values = mlp_replicates(
        problem,
        MlpParams(samples_base, level),
        0.0,
        problem.start,
        replicates,
        seed,
        workers=workers,
    )
    return CltVerdict(
        name=f"mean-identity[M={samples_base},n={level}]",
        statistic=float(values.mean()),
        target=float(target),
        stderr=float(values.std(ddof=1) / math.sqrt(replicates)),
        z_threshold=z_threshold,
    )
