//! Doubly robust estimation of causal log hazard ratios for survival data.
//!
//! The toolkit fits a marginal structural Cox model for a binary point
//! treatment under informative censoring. Estimators:
//!
//! * [`estimator::fit_aipw`] — jointly augmented doubly robust estimating
//!   equations with optional cross-fitting,
//! * [`estimator::fit_ipw`] — inverse-probability-of-treatment-and-censoring
//!   weighted partial likelihood,
//! * [`estimator::fit_naive_cox`] — unadjusted Cox partial likelihood on
//!   treatment alone,
//! * [`estimator::fit_full_data`] — the infeasible benchmark that sees both
//!   potential outcomes (simulation use only).
//!
//! The [`oracle`] module computes the population estimand (the time-averaged
//! log hazard ratio `beta*` and its companion baseline `Lambda*`) from
//! analytic potential-outcome laws, and [`sim`] provides the scenario
//! generators and Monte Carlo harness used by the acceptance suite.

pub mod data;
pub mod error;
pub mod estimator;
pub mod numerics;
pub mod nuisance;
pub mod oracle;
pub mod scores;
pub mod sim;

pub use data::{assign_folds, load_dataset, Dataset, FoldAssignment, SurvivalRecord};
pub use error::Error;
pub use estimator::{
    bootstrap_se, fit_aipw, fit_full_data, fit_ipw, fit_naive_cox, risk_contrasts, AipwFit,
    BootstrapSummary, FullDataFit, IpwFit, NaiveCoxFit, NuisanceSpec, PropensitySpec,
    RiskContrast, SurvivalSpec,
};
pub use nuisance::{identity_nuisance, ClipConfig, NuisanceTriple};
pub use oracle::{beta_of_t, beta_star, lambda_star, EstimandSolution, PotentialOutcomeLaw};
pub use scores::{SubjectScores, TimeGrid};
pub use sim::{
    generate, run_monte_carlo, sample_rates, EstimatorKind, MonteCarloReport, ScenarioConfig,
    ScenarioFamily,
};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
