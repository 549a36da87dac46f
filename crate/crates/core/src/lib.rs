//! Disaggregates regional aggregate electricity demand to primary
//! substations through a three-stage pipeline: Voronoi partitioning, demand
//! weighting (uniform, land-use rule, or a trained allocator), and auxiliary
//! correction (nighttime light and substation proximity, entering either as
//! post-corrections or as training-time priors). Ships with statistical
//! evaluation, a synthetic scenario generator, and a radial AC power-flow
//! check for downstream impact.
//!
//! The numeric core is generic over the scalar type via [`Scalar`]; the
//! aliases below pin the `f64` instantiations used by the CLI and tests.

pub mod auxiliary;
pub mod correction;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod io;
pub mod learner;
pub mod model;
pub mod powerflow;
pub mod scalar;
pub mod stats;
pub mod synth;
pub mod weighting;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` instantiations of the main domain types.
pub type Scenario64 = model::Scenario<f64>;
pub type AgentDemandField64 = weighting::AgentDemandField<f64>;
pub type CorrectionFactorField64 = auxiliary::CorrectionFactorField<f64>;
pub type CostModelParams64 = learner::CostModelParams<f64>;
pub type TrainedAllocator64 = learner::TrainedAllocator<f64>;
pub type RegionMetrics64 = evaluation::RegionMetrics<f64>;
pub type ScenarioCache64 = experiment::ScenarioCache<f64>;
