//! Knowledge-graph grounded multi-expert diagnosis ranking.
//!
//! Scoring code is generic over [`Scalar`]; the pipeline runs on `f64` and the
//! aliases below name the concrete instantiations.

pub mod adjudicator;
pub mod config;
pub mod entity;
pub mod eval;
pub mod expert;
pub mod fusion;
pub mod graph;
pub mod orchestrator;
pub mod relations;
pub mod scalar;
pub mod supplement;
pub mod text;
pub mod types;

pub use scalar::{Scalar, Weight};

/// Arbitrary-precision rational used for exact weight arithmetic.
pub type Exact = num_rational::BigRational;

pub type StdEntityF64 = entity::StdEntity<f64>;
pub type TypeWeightsF64 = entity::TypeWeights<f64>;
pub type SupplementScoreF64 = supplement::SupplementScore<f64>;
pub type SupplementParamsF64 = supplement::SupplementParams<f64>;
pub type FusionConfigF64 = fusion::FusionConfig<f64>;
pub type RankedDiagnosisF64 = fusion::RankedDiagnosis<f64>;
pub type LogicVerdictF64 = adjudicator::LogicVerdict<f64>;
pub type ConflictSignalF64 = adjudicator::ConflictSignal<f64>;

pub type StdEntityF32 = entity::StdEntity<f32>;
pub type SupplementScoreF32 = supplement::SupplementScore<f32>;
pub type RankedDiagnosisF32 = fusion::RankedDiagnosis<f32>;

pub type StdEntityExact = entity::StdEntity<Exact>;
pub type TypeWeightsExact = entity::TypeWeights<Exact>;
