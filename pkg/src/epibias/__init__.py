"""epibias: under-reporting bias in epidemic mortality data.

Pipeline: ingest registry CSVs, estimate weekly excess mortality against a
multi-year baseline, compute additive/multiplicative under-reporting
metrics, smooth them with a Bayesian spatio-temporal latent Gaussian model
fitted by MCMC, and cluster provinces by fitted bias trajectory.
"""

from .bias import (
    BiasKind,
    BiasPanel,
    ResponseVector,
    additive_bias,
    inverse_logit,
    logit,
    multiplicative_bias,
    prepare_panel,
    prepare_response,
)
from .cluster import (
    Clustering,
    KSelection,
    TrajectorySet,
    dtw,
    dtw_distance_matrix,
    kmedoids_fit,
    select_k,
    silhouette_scores,
)
from .errors import NumericalError, ValidationError
from .excess import ExcessPanel, compute_baseline, compute_excess, smooth_series
from .indices import ProvinceIndex, WeekIndex
from .ingest import (
    MobilityStack,
    MortalityPanel,
    PopulationTable,
    ValidationLog,
    load_mobility_stack,
    load_population,
    load_weekly_deaths_panel,
)
from .model import (
    HyperParams,
    LatentState,
    PriorConfig,
    joint_log_density,
    linear_predictor,
    log_prior_hyper,
    pc_rate,
    prior_sample_hyper,
)
from .posterior import (
    FittedPanel,
    VarianceShareSummary,
    fitted_values,
    interval_coverage,
    summarize_effects,
    variance_shares,
)
from .sampler import (
    ChainConfig,
    PosteriorDraws,
    convergence,
    ess_bulk,
    run_chains,
    sample_latent,
    split_rhat,
    update_hyper,
)
from .simulate import SimScenario, SimResult, grid_weights, ring_weights, simulate_dataset
from .structure import (
    InteractionStructure,
    ModelStructures,
    SpatialStructure,
    TemporalStructure,
    build_mobility_weights,
    interaction_structure,
    model_structures,
    rw1_structure,
    scale_structure,
    spatial_structure_from_weights,
)

__version__ = "0.1.0"
