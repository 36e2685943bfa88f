//! Multi-robust single-index estimation of optimal individualized treatment
//! regimes whose treatment-difference function need not be monotone.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod index_estimation;
pub mod inference;
pub mod kernel;
pub mod linalg;
pub mod nuisance;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod sim_lab;
pub mod treatment_effect;

pub use data::Dataset;
pub use error::{Error, Result};
pub use kernel::{Bandwidth, KernelFamily};
pub use nuisance::{NuisanceFit, NuisanceSpec, OutcomeBasis, OutcomeModel, PropensityForm, PropensityModel};
pub use index_estimation::{CondMeanSmoother, EstimatingEquation, InitName, InitStrategy, SolverSettings};
pub use inference::{CurveBand, RootInference};
pub use pipeline::{fit_at_beta, fit_policy, EstimatorConfig, PolicyFit, PolicyReport};
pub use policy::{RootSet, TreatmentRule, ValueEstimate};
pub use rng::stream_rng;
pub use sim_lab::{run_study, Case, Scenario, StudyReport};
pub use treatment_effect::{IndexVector, QEstimator};
