"""Multilevel Picard approximation of semilinear parabolic PDEs.

A stochastic fixed-point view of the PDE is sampled by a full-history
recursive multilevel estimator whose cost, unlike deterministic grids, grows
polynomially in the dimension.  The package bundles the estimator, exact
solution fields (Brownian, geometric Brownian, Euler-Maruyama fallback),
Lipschitz nonlinearities including default-risk pricing, closed-form error
and cost bounds, independent verification oracles, and a CLI harness for
reproducible convergence and cost studies.
"""

__version__ = "0.1.0"

from .bounds import (
    ErrorConstant,
    a_priori_error,
    cost_bound,
    cost_formula,
    diagonal_error,
    estimate_error_constant,
    select_level,
)
from .errors import (
    BudgetExceededError,
    LevelCapError,
    NonFiniteError,
    StabilityError,
    UsageError,
)
from .fields import (
    BrownianFlow,
    EulerMaruyamaFlow,
    FlowField,
    GbmFlow,
    GbmParams,
    SdeCoefficients,
    gbm_coefficients,
    moment_bound,
)
from .mlp import (
    CappedMinTerminal,
    ConstantTerminal,
    CostLedger,
    MlpParams,
    Problem,
    SquaredNormTerminal,
    SumTerminal,
    TerminalCondition,
    make_terminal,
    mlp_replicates,
    mlp_value,
    uniform_time,
)
from .nonlinearity import (
    DefaultRiskNonlinearity,
    DefaultRiskParams,
    LinearNonlinearity,
    Nonlinearity,
    ZeroNonlinearity,
    default_risk_f,
    intensity_clamp,
    linear_f,
    lipschitz_of_default_risk,
    make_nonlinearity,
)
from .oracles import (
    ReferenceValue,
    fd_solve_1d,
    linear_closed_form,
    linear_picard_mean,
    nested_picard,
    terminal_mean,
)
from .rng import (
    GENERATOR_NAME,
    GENERATOR_VERSION,
    MultiIndex,
    ROOT,
    StreamKey,
    derive,
    root_index,
    std_normals,
    stream_key,
    uniform01,
    uniforms,
)
from .stattests import CltVerdict, EmRateResult, em_rate_test, flow_property_test, mean_identity_test
