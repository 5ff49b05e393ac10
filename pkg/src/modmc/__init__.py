"""Parallel compartment-constrained MCMC with eigenvector recombination."""

from .exceptions import (
    BootstrapDegenerate,
    ChainEscaped,
    ConfigError,
    MaxIterationsExceeded,
    ModmcError,
    NegativeEigenvectorEntry,
    NonFiniteDensity,
    NotIrreducible,
    ResidualToleranceExceeded,
    TooFewBlocks,
    TruncationNotConverged,
    TuningFailed,
    ZeroLowerLevel,
)
from .models import (
    BaseDensity,
    Ladder,
    Partition,
    TargetModel,
    TemperedTarget,
    WeightTable,
    check_gradient,
    gaussian_base,
    log_pi_aug,
    log_ratio,
    preconditioned_model,
    region_of,
)
from .kernels import (
    ChainDiagnostics,
    ChainState,
    CounterMatrix,
    GaussianRandomWalk,
    HmcSettings,
    ProposalKernel,
    generic_constrained_step,
    hmc_constrained_step,
    leapfrog,
    mh_constrained_step,
    temperature_move,
)
from .stationary import (
    StochasticMatrix,
    compartment_probabilities,
    connectivity_check,
    power_iteration_oracle,
    stationary_distribution,
)
from .sampler import (
    GenericKernel,
    HmcKernel,
    MhKernel,
    ModularEstimate,
    ModularRunSpec,
    combine,
    run_constrained_chain,
    run_modular_mcmc,
)
from .tempering import (
    StRunSpec,
    TuningReport,
    geometric_insert,
    insertion_count,
    load_tuning,
    run_modular_st,
    stepsize_schedule,
    tune_beta1,
    tune_ladder_and_weights,
)
from .partition import (
    AnchorSet,
    MahalanobisMetric,
    NearestAnchorPartition,
    OptimizerSettings,
    build_partition,
    find_modes,
    low_discrepancy_anchors,
    nearest_mode_partition,
)
from .error_estimation import (
    BootstrapSample,
    SeReport,
    block_se,
    bootstrap_compartment_probs,
    choose_block_size,
    counter_block_covariance,
    estimate_se,
)
from .scenarios import (
    Scenario,
    gaussian_mixture_model,
    gaussian_mixture_scenario,
    mixture_true_pi_h,
    sparse_regression_scenario,
    spike_slab_regression_model,
)

__version__ = "0.1.0"
