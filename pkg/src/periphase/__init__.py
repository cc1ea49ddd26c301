"""Simulation and phase inference for diffusions whose drift carries a
discontinuous T-periodic signal at unknown phase."""

from .model import (
    CoefFn,
    DiffusionModel,
    PeriodicFn,
    SignalSpec,
    occupation_measure,
    parse_model_config,
    signal_value,
)
from .simulate import (
    PathGrid,
    SegmentChain,
    extract_segments,
    fluctuation_probe,
    load_path_csv,
    save_path_csv,
    simulate_path,
)
from .ergodic import (
    EmpiricalLaw,
    OUAnalytic,
    empirical_invariant,
    lln_functional,
    ou_moments,
)
from .likelihood import (
    LikelihoodCurve,
    bracket_check,
    hellinger_mc,
    local_curve,
    log_lr,
    martingale_clt_check,
    recover_increments,
)
from .estimators import EstimateRecord, bayes, j_theta, mc_study, mle
from .limit_experiment import (
    LimitEstimates,
    LimitField,
    equivariance_check,
    hellinger_exact,
    lam_target,
    limit_bayes,
    limit_mle,
    sample_field,
    tail_decay_check,
    variance_study,
)
from .harness import ExperimentConfig, ReportEntry, run_config, seed_stream

__version__ = "0.1.0"
