"""Adaptive momentum decentralized optimization: two gossip-based tracking
loops (single-sample stochastic and minibatch finite-sum), their step-size
theory as executable calculators and potentials, and a reproducible
experiment harness."""

from .adaptive import (
    KINDS,
    AdamLike,
    BarzilaiBorwein,
    Identity,
    Preconditioner,
    make_preconditioner,
)
from .diagnostics import (
    METRIC_COLUMNS,
    DescentMargins,
    LyapunovCoeffs,
    LyapunovError,
    MetricRow,
    TheoremBounds,
    TheoryParams,
    compute_metrics,
    default_theta,
    descent_margins,
    h_finitesum,
    h_stochastic,
    lyapunov_omega,
    lyapunov_phi,
    potential_series,
    stationary_gap,
    theoretical_params_finitesum,
    theoretical_params_stochastic,
)
from .harness import (
    DEFAULTS,
    ConfigError,
    ExperimentResult,
    RunComparison,
    build_problem,
    build_topology,
    compare_runs,
    load_config,
    make_hyperparams,
    parse_config_text,
    read_trace,
    resolve_schedule,
    run_experiment,
    serialize_config,
    validate_config,
    write_trace,
)
from .objective import (
    DatasetError,
    NodeDataset,
    Objective,
    QuadraticObjective,
    Sample,
    SigmoidObjective,
    draw_minibatch,
    global_grad,
    global_loss,
    parse_libsvm,
    partition,
    quadratic_minimizer,
    random_quadratic,
    smoothness,
    synthetic_logistic,
)
from .optimizer import (
    ALGORITHMS,
    DivergenceError,
    HyperParams,
    NodeState,
    RunResult,
    Snapshot,
    choose_uniform_iterate,
    default_x0,
    run,
    take_snapshot,
)
from .topology import (
    MixingMatrix,
    TopologyError,
    build_complete,
    build_regular3,
    build_ring,
    compute_nu,
    make_mixing_matrix,
    mix,
    validate_mixing_weights,
)

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS",
    "AdamLike",
    "BarzilaiBorwein",
    "ConfigError",
    "DEFAULTS",
    "DatasetError",
    "DescentMargins",
    "DivergenceError",
    "ExperimentResult",
    "HyperParams",
    "Identity",
    "KINDS",
    "LyapunovCoeffs",
    "LyapunovError",
    "METRIC_COLUMNS",
    "MetricRow",
    "MixingMatrix",
    "NodeDataset",
    "NodeState",
    "Objective",
    "Preconditioner",
    "QuadraticObjective",
    "RunComparison",
    "RunResult",
    "Sample",
    "SigmoidObjective",
    "Snapshot",
    "TheoremBounds",
    "TheoryParams",
    "TopologyError",
    "build_complete",
    "build_problem",
    "build_regular3",
    "build_ring",
    "build_topology",
    "choose_uniform_iterate",
    "compare_runs",
    "compute_metrics",
    "compute_nu",
    "default_theta",
    "default_x0",
    "descent_margins",
    "draw_minibatch",
    "global_grad",
    "global_loss",
    "h_finitesum",
    "h_stochastic",
    "load_config",
    "lyapunov_omega",
    "lyapunov_phi",
    "make_hyperparams",
    "make_mixing_matrix",
    "make_preconditioner",
    "mix",
    "parse_config_text",
    "parse_libsvm",
    "partition",
    "potential_series",
    "quadratic_minimizer",
    "random_quadratic",
    "read_trace",
    "resolve_schedule",
    "run",
    "run_experiment",
    "serialize_config",
    "smoothness",
    "stationary_gap",
    "synthetic_logistic",
    "take_snapshot",
    "theoretical_params_finitesum",
    "theoretical_params_stochastic",
    "validate_config",
    "validate_mixing_weights",
    "write_trace",
]
