"""Experiment orchestration: config parsing, runs, CSV output, verification.

Configs are TOML documents with flat tables ``[problem]``, ``[mlp]``,
``[oracle]`` and ``[output]`` (grammar documented in the README).  A run
sweeps the (M, n) grid, produces one :class:`RunRecord` per cell, and writes
a CSV whose ``#``-prefixed metadata lines pin the config hash, generator
name/version, git revision and seed, so identical configs reproduce
byte-identical bodies.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import subprocess
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .bounds import a_priori_error, cost_bound, cost_formula, estimate_error_constant
from .errors import UsageError
from .fields import BrownianFlow, GbmFlow, GbmParams, gbm_coefficients, moment_bound
from .mlp import (
    CostLedger,
    MAX_UNGUARDED_LEVEL,
    MlpParams,
    Problem,
    make_terminal,
    mlp_replicates,
    mlp_value,
)
from .nonlinearity import make_nonlinearity
from .oracles import ReferenceValue, fd_solve_1d, linear_closed_form, nested_picard
from .rng import GENERATOR_NAME, GENERATOR_VERSION, stream_key
from .stattests import em_rate_test, flow_property_test, mean_identity_test

DEFAULT_BUDGET = 10**9
DEFAULT_REPLICATES = 100


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description plus the raw dict it was parsed from."""

    problem: Problem
    field_kind: str
    grid: tuple[tuple[int, int], ...]
    replicates: int
    oracle: dict
    seed: int
    budget: int
    override_budget: bool
    workers: int
    out_path: str | None
    raw: dict

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True, default=str).encode()
        ).hexdigest()[:16]


def build_field(cfg: dict):
    """(field, kind) from the [problem] table."""
    kind = cfg.get("field", "bm")
    d = int(cfg.get("d", 1))
    if kind == "bm":
        return BrownianFlow(d), "bm"
    if kind == "gbm":
        if "alphas" in cfg:
            alphas = np.asarray(cfg["alphas"], dtype=float)
            betas = np.asarray(cfg["betas"], dtype=float)
        else:
            alphas = np.full(d, float(cfg.get("alpha", 0.0)))
            betas = np.full(d, float(cfg.get("beta", 0.0)))
        cols = cfg.get("sigma_cols")
        cols = np.asarray(cols, dtype=float) if cols is not None else np.eye(d)
        params = GbmParams(alphas=alphas, betas=betas, sigma_cols=cols)
        return GbmFlow(params), "gbm"
    raise UsageError(f"unknown field kind {kind!r}")


def build_problem(cfg: dict) -> tuple[Problem, str]:
    d = int(cfg.get("d", 1))
    horizon = float(cfg.get("T", 1.0))
    if "xi" in cfg:
        xi = np.asarray(cfg["xi"], dtype=float)
    else:
        xi = np.full(d, float(cfg.get("xi0", 0.0)))
    field, kind = build_field(cfg)

    nl_kind = cfg.get("nonlinearity", "zero")
    if nl_kind == "linear":
        f = make_nonlinearity("linear", coefficient=float(cfg.get("c", 1.0)))
    elif nl_kind == "default_risk":
        f = make_nonlinearity(
            "default_risk",
            rate=float(cfg["rate"]),
            recovery=float(cfg["recovery"]),
            gamma_low=float(cfg["gamma_low"]),
            gamma_high=float(cfg["gamma_high"]),
            v_low=float(cfg["v_low"]),
            v_high=float(cfg["v_high"]),
        )
    else:
        f = make_nonlinearity(nl_kind)

    g_kind = cfg.get("g", "squared_norm")
    g_kwargs = {}
    if g_kind == "constant":
        g_kwargs["value"] = float(cfg.get("g_value", 1.0))
    if g_kind == "min_capped":
        g_kwargs["cap"] = float(cfg.get("g_cap", 100.0))
    g = make_terminal(g_kind, **g_kwargs)

    return Problem(d, horizon, xi, field, f, g), kind


def build_grid(cfg: dict) -> tuple[tuple[int, int], ...]:
    if "diagonal" in cfg:
        return tuple((int(n), int(n)) for n in cfg["diagonal"])
    ms = [int(m) for m in cfg.get("m_list", [2])]
    ns = [int(n) for n in cfg.get("n_list", [1])]
    return tuple((m, n) for m in ms for n in ns)


def load_config(
    path: str,
    seed: int | None = None,
    workers: int | None = None,
    budget: int | None = None,
    override_budget: bool = False,
    out: str | None = None,
) -> ExperimentConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return config_from_dict(
        raw,
        seed=seed,
        workers=workers,
        budget=budget,
        override_budget=override_budget,
        out=out,
    )


def config_from_dict(
    raw: dict,
    seed: int | None = None,
    workers: int | None = None,
    budget: int | None = None,
    override_budget: bool = False,
    out: str | None = None,
) -> ExperimentConfig:
    problem_cfg = raw.get("problem", {})
    mlp_cfg = raw.get("mlp", {})
    oracle_cfg = dict(raw.get("oracle", {"kind": "closed_form"}))
    output_cfg = raw.get("output", {})
    problem, kind = build_problem(problem_cfg)
    return ExperimentConfig(
        problem=problem,
        field_kind=kind,
        grid=build_grid(mlp_cfg),
        replicates=int(mlp_cfg.get("replicates", DEFAULT_REPLICATES)),
        oracle=oracle_cfg,
        seed=int(seed if seed is not None else raw.get("seed", 0)),
        budget=int(budget if budget is not None else raw.get("budget", DEFAULT_BUDGET)),
        override_budget=bool(override_budget or raw.get("override_budget", False)),
        workers=int(workers if workers is not None else raw.get("workers", 1)),
        out_path=out if out is not None else output_cfg.get("path"),
        raw=raw,
    )


# ---------------------------------------------------------------------------
# runs


@dataclass(frozen=True)
class RunRecord:
    """Result of one (M, n) grid cell."""

    dimension: int
    samples_base: int
    level: int
    replicates: int
    seed: int
    sample_mean: float
    sample_std: float
    rmse: float
    rmse_stderr: float
    reference_value: float
    reference_method: str
    reference_error: float
    bound: float
    predicted_cost: int
    measured_cost: int
    status: str = "ok"
    wall_time_s: float = 0.0


def resolve_reference(config: ExperimentConfig) -> ReferenceValue:
    """Instantiate the configured oracle for u(0, xi)."""
    cfg = config.oracle
    kind = cfg.get("kind", "closed_form")
    problem = config.problem
    if kind == "closed_form":
        f = problem.f
        if f.name == "zero":
            c = 0.0
        elif f.name == "linear":
            c = f.coefficient
        else:
            raise UsageError("closed-form oracle needs a zero or linear nonlinearity")
        return linear_closed_form(c, config.field_kind, problem.g.kind, problem)
    if kind == "finite_difference":
        return fd_solve_1d(
            problem,
            halfwidth=cfg.get("halfwidth"),
            space_nodes=int(cfg.get("space_nodes", 400)),
            time_steps=cfg.get("time_steps"),
        )
    if kind == "nested_picard":
        return nested_picard(
            problem,
            depth=int(cfg.get("depth", 2)),
            inner_samples=int(cfg.get("inner_samples", 200)),
            seed=config.seed,
        )
    raise UsageError(f"unknown oracle kind {kind!r}")


def run_experiment(config: ExperimentConfig) -> list[RunRecord]:
    """Sweep the grid; one record per cell, budget violations marked per row."""
    problem = config.problem
    reference = resolve_reference(config)
    constant = estimate_error_constant(problem, seed=config.seed)
    c_plus = constant.inflated(5.0)
    lip, horizon = problem.f.lipschitz, problem.horizon

    records = []
    for m_base, level in config.grid:
        predicted = cost_formula(problem.dimension, m_base, level, 1)
        bound = (
            a_priori_error(c_plus, lip, horizon, m_base, level) if level >= 0 else math.nan
        )
        guarded = level > MAX_UNGUARDED_LEVEL or predicted * config.replicates > config.budget
        if guarded and not config.override_budget:
            records.append(
                RunRecord(
                    dimension=problem.dimension,
                    samples_base=m_base,
                    level=level,
                    replicates=config.replicates,
                    seed=config.seed,
                    sample_mean=math.nan,
                    sample_std=math.nan,
                    rmse=math.nan,
                    rmse_stderr=math.nan,
                    reference_value=reference.value,
                    reference_method=reference.method,
                    reference_error=reference.error_estimate,
                    bound=bound,
                    predicted_cost=predicted,
                    measured_cost=0,
                    status="budget_exceeded",
                )
            )
            continue
        t0 = time.perf_counter()
        params = MlpParams(m_base, level)
        values = mlp_replicates(
            problem,
            params,
            0.0,
            problem.start,
            config.replicates,
            config.seed,
            workers=config.workers,
        )
        ledger = CostLedger()
        check = mlp_value(
            problem, params, 0.0, problem.start, (1,), ledger, seed=config.seed
        )
        if values[0] != check:
            raise RuntimeError("replicate 1 does not reproduce; rng state leaked")
        if problem.field.exact and ledger.total_draws != predicted:
            raise RuntimeError(
                f"measured cost {ledger.total_draws} != predicted {predicted}"
            )
        wall = time.perf_counter() - t0
        sq_dev = (values - reference.value) ** 2
        mse = float(sq_dev.mean())
        rmse = math.sqrt(mse)
        se_mse = float(sq_dev.std(ddof=1) / math.sqrt(len(values)))
        records.append(
            RunRecord(
                dimension=problem.dimension,
                samples_base=m_base,
                level=level,
                replicates=config.replicates,
                seed=config.seed,
                sample_mean=float(values.mean()),
                sample_std=float(values.std(ddof=1)) if len(values) > 1 else 0.0,
                rmse=rmse,
                rmse_stderr=se_mse / (2.0 * rmse) if rmse > 0 else 0.0,
                reference_value=reference.value,
                reference_method=reference.method,
                reference_error=reference.error_estimate,
                bound=bound,
                predicted_cost=predicted,
                measured_cost=ledger.total_draws,
                wall_time_s=wall,
            )
        )
    return records


_CSV_COLUMNS = [
    "d",
    "M",
    "n",
    "K",
    "seed",
    "sample_mean",
    "sample_std",
    "rmse",
    "rmse_stderr",
    "reference_value",
    "reference_method",
    "reference_error",
    "bound",
    "predicted_cost",
    "measured_cost",
    "status",
]


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _git_revision() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def records_to_csv(
    records: Sequence[RunRecord], config: ExperimentConfig, total_wall_s: float = 0.0
) -> str:
    """Render metadata lines, header and rows.

    Wall time appears only in the metadata comment so the body stays
    byte-identical across reruns of the same (config, seed).
    """
    buf = io.StringIO()
    buf.write(f"# mlpicard {__version__}\n")
    buf.write(f"# generator {GENERATOR_NAME} v{GENERATOR_VERSION}\n")
    buf.write(f"# config_hash {config.config_hash}\n")
    buf.write(f"# git_revision {_git_revision()}\n")
    buf.write(f"# seed {config.seed}\n")
    buf.write(f"# total_wall_s {total_wall_s:.3f}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for r in records:
        writer.writerow(
            [
                r.dimension,
                r.samples_base,
                r.level,
                r.replicates,
                r.seed,
                _fmt(r.sample_mean),
                _fmt(r.sample_std),
                _fmt(r.rmse),
                _fmt(r.rmse_stderr),
                _fmt(r.reference_value),
                r.reference_method,
                _fmt(r.reference_error),
                _fmt(r.bound),
                r.predicted_cost,
                r.measured_cost,
                r.status,
            ]
        )
    return buf.getvalue()


def parse_csv(text: str) -> tuple[dict, list[dict]]:
    """Round-trip parser for the result CSV: (metadata, rows as dicts)."""
    meta = {}
    lines = []
    for line in text.splitlines():
        if line.startswith("#"):
            parts = line[1:].strip().split(" ", 1)
            if len(parts) == 2:
                meta[parts[0]] = parts[1]
        else:
            lines.append(line)
    reader = csv.DictReader(lines)
    return meta, list(reader)


# ---------------------------------------------------------------------------
# convergence fit


@dataclass(frozen=True)
class FitSummary:
    """Diagonal-sweep diagnostics: decay fit and bound/monotonicity flags."""

    levels: tuple[int, ...]
    rmses: tuple[float, ...]
    bounds: tuple[float, ...]
    log_rmse_slope: float
    monotone: bool
    below_bound: bool


def convergence_fit(records: Sequence[RunRecord]) -> FitSummary:
    """Summarize a diagonal sweep (records with M == n, at least 3 levels).

    Monotonicity tolerates 2-sigma replicate noise on each comparison; the
    bound flag requires every level to sit below its a-priori bound.
    """
    diag = sorted(
        (r for r in records if r.samples_base == r.level and r.status == "ok"),
        key=lambda r: r.level,
    )
    if len(diag) < 3:
        raise UsageError("need at least 3 diagonal levels to fit")
    levels = tuple(r.level for r in diag)
    rmses = tuple(r.rmse for r in diag)
    bounds = tuple(r.bound for r in diag)
    slope = float(np.polyfit(levels, np.log(rmses), 1)[0])
    monotone = True
    for prev, cur in zip(diag, diag[1:]):
        noise = 2.0 * math.hypot(prev.rmse_stderr, cur.rmse_stderr)
        if cur.rmse > prev.rmse + noise:
            monotone = False
    below = all(r.rmse <= r.bound for r in diag)
    return FitSummary(
        levels=levels,
        rmses=rmses,
        bounds=bounds,
        log_rmse_slope=slope,
        monotone=monotone,
        below_bound=below,
    )


# ---------------------------------------------------------------------------
# verification suites


@dataclass(frozen=True)
class VerifyRow:
    """One line of the verification report."""

    suite: str
    name: str
    statistic: float
    target: float
    stderr: float
    z_score: float
    passed: bool
    negative_control: bool = False

    @property
    def ok(self) -> bool:
        # negative-control rows already encode "failed as required" in passed
        return self.passed


def _verdict_row(suite: str, v, negate: bool = False) -> VerifyRow:
    passed = (not v.passed) if negate else v.passed
    return VerifyRow(
        suite=suite,
        name=v.name + (" [negative-control]" if negate else ""),
        statistic=v.statistic,
        target=v.target,
        stderr=v.stderr,
        z_score=v.z_score,
        passed=passed,
        negative_control=negate,
    )


def _suite_rng(seed: int) -> list[VerifyRow]:
    from scipy.stats import chi2

    from .rng import uniforms

    key = stream_key(seed, (-9,), b"chi")
    n = 10**6
    u = uniforms(key, 0, n)
    counts = np.bincount((u * 16).astype(int), minlength=16)
    expected = n / 16
    stat = float(np.sum((counts - expected) ** 2 / expected))
    threshold = float(chi2.ppf(1.0 - 1e-6, df=15))
    return [
        VerifyRow(
            suite="rng",
            name="chi-square-16bins",
            statistic=stat,
            target=threshold,
            stderr=0.0,
            z_score=stat / threshold,
            passed=stat <= threshold,
        )
    ]


def _suite_cost(seed: int) -> list[VerifyRow]:
    from .mlp import SquaredNormTerminal
    from .nonlinearity import linear_f

    rows = []
    for d in (1, 2, 5):
        problem = Problem(
            d, 1.0, np.zeros(d), BrownianFlow(d), linear_f(1.0), SquaredNormTerminal()
        )
        for m_base in (1, 2, 3):
            for level in range(1, 6):
                ledger = CostLedger()
                mlp_value(
                    problem,
                    MlpParams(m_base, level),
                    0.0,
                    problem.start,
                    (0,),
                    ledger,
                    seed=seed,
                )
                predicted = cost_formula(d, m_base, level, 1)
                cap = cost_bound(d, m_base, level, 1)
                rows.append(
                    VerifyRow(
                        suite="cost",
                        name=f"cost[d={d},M={m_base},n={level}]",
                        statistic=float(ledger.total_draws),
                        target=float(predicted),
                        stderr=0.0,
                        z_score=0.0 if ledger.total_draws == predicted else math.inf,
                        passed=ledger.total_draws == predicted and predicted <= cap,
                    )
                )
    return rows


def _correlated_gbm_2d() -> GbmFlow:
    # two unit columns with off-diagonal 0.5 before renormalization
    cols = np.array([[1.0, 0.5], [0.5, 1.0]])
    cols /= np.linalg.norm(cols, axis=0)
    params = GbmParams(
        alphas=np.array([0.05, 0.03]),
        betas=np.array([0.2, 0.3]),
        sigma_cols=cols,
    )
    return GbmFlow(params)


def _suite_flow(seed: int) -> list[VerifyRow]:
    field = _correlated_gbm_2d()
    x = np.array([1.0, 2.0])
    verdicts = flow_property_test(field, 0.0, 0.5, 1.0, x, 100_000, seed)
    return [_verdict_row("flow", v) for v in verdicts]


def _suite_em(seed: int) -> list[VerifyRow]:
    params = GbmParams.uncorrelated(0.05, 0.2, 1)
    result = em_rate_test(
        gbm_coefficients(params),
        GbmFlow(params),
        0.0,
        1.0,
        np.array([1.0]),
        [4, 8, 16, 32, 64, 128],
        10_000,
        seed,
    )
    return [
        VerifyRow(
            suite="em",
            name="em-strong-order",
            statistic=result.slope,
            target=0.5,
            stderr=0.1 / 5.0,  # acceptance band [0.4, 0.6] rendered as 5 sigma
            z_score=abs(result.slope - 0.5) / 0.02,
            passed=result.passed,
        )
    ]


def _heat_linear_problem() -> Problem:
    from .mlp import SquaredNormTerminal
    from .nonlinearity import linear_f

    return Problem(
        1, 1.0, np.zeros(1), BrownianFlow(1), linear_f(1.0), SquaredNormTerminal()
    )


def _suite_mean_identity(seed: int, replicates: int = 4000) -> list[VerifyRow]:
    problem = _heat_linear_problem()
    g_mean = 1.0  # E[W_1^2]
    rows = []
    for level in (1, 2):
        v = mean_identity_test(problem, 2, level, replicates, seed, g_mean)
        rows.append(_verdict_row("mean-identity", v))
    return rows


def _suite_moment(seed: int) -> list[VerifyRow]:
    rows = []
    samples = 100_000
    bm = BrownianFlow(3)
    xi = np.zeros(3)
    xs, _ = bm.evaluate_batch(0.0, 1.0, xi, stream_key(seed, (-5,), b"mb"), samples)
    norms = np.linalg.norm(xs, axis=1)
    for p in (1, 2, 4):
        emp = float((norms**p).mean())
        cap = moment_bound(p, 3.0, 0.0, 1.0, 0.0)
        rows.append(
            VerifyRow(
                suite="moment",
                name=f"bm-moment[p={p}]",
                statistic=emp,
                target=cap,
                stderr=0.0,
                z_score=emp / cap,
                passed=emp <= cap,
            )
        )
    field = _correlated_gbm_2d()
    xi = np.array([1.0, 2.0])
    xs, _ = field.evaluate_batch(0.0, 1.0, xi, stream_key(seed, (-6,), b"mg"), samples)
    norms = np.linalg.norm(xs, axis=1)
    kappa = field.params.kappa
    for p in (1, 2, 4):
        emp = float((norms**p).mean())
        cap = moment_bound(p, 0.0, kappa, 1.0, float(np.linalg.norm(xi)))
        rows.append(
            VerifyRow(
                suite="moment",
                name=f"gbm-moment[p={p}]",
                statistic=emp,
                target=cap,
                stderr=0.0,
                z_score=emp / cap,
                passed=emp <= cap,
            )
        )
    return rows


def _suite_oracles(seed: int) -> list[VerifyRow]:
    from .mlp import SquaredNormTerminal
    from .nonlinearity import linear_f

    problem = Problem(
        1, 1.0, np.zeros(1), BrownianFlow(1), linear_f(1.0), SquaredNormTerminal()
    )
    ref_fd = fd_solve_1d(problem, space_nodes=200)
    exact = linear_closed_form(1.0, "bm", "squared_norm", problem).value
    gap = abs(ref_fd.value - exact)
    allowed = ref_fd.error_estimate + 1e-6
    return [
        VerifyRow(
            suite="oracles",
            name="fd-vs-closed-form",
            statistic=ref_fd.value,
            target=exact,
            stderr=allowed,
            z_score=gap / allowed if allowed > 0 else math.inf,
            passed=gap <= allowed,
        )
    ]


def _suite_negative_controls(seed: int) -> list[VerifyRow]:
    rows = []
    field = _correlated_gbm_2d()
    mismatched = GbmFlow(
        GbmParams(
            alphas=field.params.alphas + 0.5,
            betas=field.params.betas,
            sigma_cols=field.params.sigma_cols,
        )
    )
    verdicts = flow_property_test(
        field,
        0.0,
        0.5,
        1.0,
        np.array([1.0, 2.0]),
        20_000,
        seed,
        second_leg_field=mismatched,
    )
    # the drift mismatch must break at least every first-moment comparison
    for v in verdicts:
        if ",m1]" in v.name:
            rows.append(_verdict_row("negative-controls", v, negate=True))
    problem = _heat_linear_problem()
    wrong = mean_identity_test(
        problem, 2, 1, 2000, seed, 1.0, target_override=2.0
    )
    rows.append(_verdict_row("negative-controls", wrong, negate=True))
    return rows


_SUITES = {
    "rng": _suite_rng,
    "cost": _suite_cost,
    "flow": _suite_flow,
    "em": _suite_em,
    "mean-identity": _suite_mean_identity,
    "moment": _suite_moment,
    "oracles": _suite_oracles,
    "negative-controls": _suite_negative_controls,
}


def verify(selector: str, seed: int = 0) -> tuple[list[VerifyRow], int]:
    """Run the selected verification suites.

    Returns the report rows and the process exit status: nonzero iff any
    check misbehaved (a plain check failing, or a negative control passing).
    """
    if selector == "all":
        names = list(_SUITES)
    elif selector in _SUITES:
        names = [selector]
    else:
        raise UsageError(
            f"unknown suite {selector!r}; pick one of {', '.join(_SUITES)} or 'all'"
        )
    rows = []
    for name in names:
        rows.extend(_SUITES[name](seed))
    status = 0 if all(r.ok for r in rows) else 1
    return rows, status


def verify_report_csv(rows: Sequence[VerifyRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["suite", "name", "statistic", "target", "stderr", "z", "pass", "negative_control"]
    )
    for r in rows:
        writer.writerow(
            [
                r.suite,
                r.name,
                _fmt(r.statistic),
                _fmt(r.target),
                _fmt(r.stderr),
                _fmt(r.z_score),
                r.passed,
                r.negative_control,
            ]
        )
    return buf.getvalue()
