"""Desk-scale simulator and analysis toolkit for communication-efficient SGD.

The algorithm family A(tau, W, v) covers periodic averaging, elastic
averaging, decentralized gossip, and their hybrids through three knobs:
the communication period tau, the mixing matrix W, and the number of
auxiliary (gradient-free) variables v.
"""

from coopsgd.engine import (
    AlgorithmConfig,
    ConfigError,
    ParamMatrix,
    RunTrace,
    average_traces,
    averaged_model,
    coop_step,
    effective_lr,
    network_error,
    run,
    run_many,
    write_trace_csv,
)
from coopsgd.mixing import (
    MixingError,
    MixingMatrix,
    MixingReport,
    MixingSchedule,
    as_mixing,
    best_easgd_alpha,
    best_generalized_elastic_alpha,
    easgd_zeta,
    generalized_elastic_zeta,
    make_dense_with_zeta,
    make_easgd,
    make_fully_connected,
    make_generalized_elastic,
    make_hierarchical,
    make_identity,
    make_ring,
    mixing_from_dict,
    power_deviation_norm,
    random_doubly_stochastic,
    spectral_gap,
    validate_mixing,
)
from coopsgd.objectives import (
    GradientOracle,
    LogisticProblem,
    OracleError,
    QuadraticProblem,
    make_diag_quadratic,
    oracle_from_dict,
)
from coopsgd.theory import (
    BoundInputs,
    BoundReport,
    TheoryError,
    corollary1_bound,
    dpsgd_bound,
    easgd_bound,
    empirical_decomposition_bound,
    lr_condition,
    max_stable_eta_tilde,
    pasgd_bound,
    theorem1_bound,
    zeta_threshold,
)
from coopsgd.timeline import DelayModel, TimelineTrace, simulate_timeline, sync_cost

__all__ = [
    "AlgorithmConfig",
    "BoundInputs",
    "BoundReport",
    "ConfigError",
    "DelayModel",
    "GradientOracle",
    "LogisticProblem",
    "MixingError",
    "MixingMatrix",
    "MixingReport",
    "MixingSchedule",
    "OracleError",
    "ParamMatrix",
    "QuadraticProblem",
    "RunTrace",
    "TheoryError",
    "TimelineTrace",
    "as_mixing",
    "average_traces",
    "averaged_model",
    "best_easgd_alpha",
    "best_generalized_elastic_alpha",
    "coop_step",
    "corollary1_bound",
    "dpsgd_bound",
    "easgd_bound",
    "easgd_zeta",
    "effective_lr",
    "empirical_decomposition_bound",
    "generalized_elastic_zeta",
    "lr_condition",
    "make_dense_with_zeta",
    "make_diag_quadratic",
    "make_easgd",
    "make_fully_connected",
    "make_generalized_elastic",
    "make_hierarchical",
    "make_identity",
    "make_ring",
    "max_stable_eta_tilde",
    "mixing_from_dict",
    "network_error",
    "oracle_from_dict",
    "pasgd_bound",
    "power_deviation_norm",
    "random_doubly_stochastic",
    "run",
    "run_many",
    "simulate_timeline",
    "spectral_gap",
    "sync_cost",
    "theorem1_bound",
    "validate_mixing",
    "write_trace_csv",
    "zeta_threshold",
]
