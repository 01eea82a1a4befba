"""Hierarchical Bayesian analysis of repeated ordinal voting panels.

The package fits a cumulative-logit model with per-pair random effects
whose means carry cluster, adjacency and migration structure; latent
cluster labels, mixture weights and all variance components are sampled
by Metropolis-within-Gibbs.  Post-processing covers convergence
diagnostics, DIC model selection, label alignment, cluster-membership
summaries and a standardized-effect bias screen.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DegenerateDrawError,
    DegenerateLikelihoodWarning,
    DegenerateTraceError,
    InvariantViolation,
    OrdvoteError,
)
from .model import (
    ActType,
    BETA_LABELS,
    CovariateProfile,
    DEFAULT_SCORE_VALUES,
    Dataset,
    Language,
    ModelConfig,
    PairStructure,
    ParameterState,
    ScoreScale,
    category_prob_matrix,
    category_probs,
    interval_logprob,
    linear_predictor,
    log_likelihood,
    log_prior,
    per_record_loglik,
    theta_mean,
    theta_vector,
)
from .draws import (
    ParameterLayout,
    PosteriorDraws,
    SamplerConfig,
    read_archive,
    write_archive,
)
from .mcmc import (
    ProposalScales,
    Sampler,
    draw_state_from_prior,
    init_state,
    run,
    zeta_posterior_concentration,
)
from .diagnostics import (
    DiagnosticRow,
    DicResult,
    autocorrelation,
    diagnose_all,
    dic,
    dic_components,
    effective_sample_size,
    gelman_rubin,
    write_diagnostics,
)
from .analysis import (
    BiasReport,
    BiasRow,
    MembershipMatrix,
    PerformerEffectRow,
    SummaryRow,
    best_label_agreement,
    exceedance,
    membership,
    performer_effects,
    relabel,
    select_model,
    standardize_alpha,
    standardized_matrix,
    summarize,
    write_bias_report,
    write_membership,
    write_performer_effects,
    write_summary,
)
from .dataio import (
    InputBundle,
    TrueParameters,
    ValidationReport,
    dataset_digest,
    draw_true_state,
    load,
    load_dataset,
    make_design,
    resample_scores,
    simulate,
    validate,
    write_dataset,
    write_true_parameters,
)

__all__ = [name for name in dir() if not name.startswith("_")]
