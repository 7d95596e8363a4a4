"""Collaborative IPTW estimation of a marginal treatment effect across sites
that cannot pool their rows."""

from ._cola import (
    TRUE_LOG_OR,
    TRUE_MU0,
    TRUE_MU1,
    InfeasibleTarget,
    InputError,
    PositivityViolation,
    SiteDataset,
    SolverConfig,
    finalize,
    generate_trial,
    meta_analysis,
    monte_carlo_truth,
    next_round,
    oracle,
    relay_hop,
    report,
    run_experiment,
    run_protocol,
    start_packet,
)

__version__ = "0.1.0"
