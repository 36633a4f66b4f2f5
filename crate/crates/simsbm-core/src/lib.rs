//! SIMSBM: mixed-membership stochastic block models over multipartite
//! interaction data.
//!
//! An observation pairs a typed context (one entity per layer; layers of the
//! same type may interact) with a discrete output. Every entity of a type
//! spreads over that type's clusters through a shared membership matrix, and
//! a cluster-interaction tensor holds one output distribution per unordered
//! combination of clusters. Fitting maximizes the observed-output
//! log-likelihood by expectation-maximization with multiple random restarts.
//!
//! Modules:
//! - [`spec`]: model structure (types, layers, cluster counts) and validation
//! - [`dataset`]: canonicalized, deduplicated observation lists
//! - [`model`]: parameters, the canonical cluster index, prediction
//! - [`em`]: the fitting loop and its sufficient statistics
//! - [`eval`]: train/test splits, ranking metrics, reference baselines
//! - [`io`]: TSV datasets, JSON model files, fit reports

pub mod dataset;
pub mod em;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod spec;

pub use dataset::{Dataset, Observation};
pub use em::{
    accumulate, accumulate_with_ll, e_step, fit, fit_single, init_params, m_step, FitConfig,
    FitReport, Keep, RestartReport, Responsibility, SufficientStats,
};
pub use error::{Error, ErrorClass, Result};
pub use eval::{
    baseline_frequency, baseline_naive_bayes, compute_metrics, evaluate_model, evaluate_scorer,
    score_dataset, split, FrequencyBaseline, MetricReport, NaiveBayesBaseline, ScoredPredictions,
    Scorer,
};
pub use io::{
    expand_lower_order, load_dataset, load_model, save_dataset, save_fit_report, save_model,
    SpecMode, TokenMap, TrainedModel, Vocabulary,
};
pub use model::{
    CanonicalIndex, ClusterTensor, MembershipMatrix, Model, MAX_TENSOR_CELLS, PROB_FLOOR,
    ROW_SUM_TOL,
};
pub use spec::{parse_spec_shorthand, validate_spec, ModelSpec, ShorthandType, TypeDef, Violation};
