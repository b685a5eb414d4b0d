//! Post-processing for a source-independent quantum random number
//! generator: detector simulation, squashing and basis sampling, phase-error
//! estimation, Toeplitz extraction and statistical testing.
//!
//! The numerical kernel ([`entropy`], [`estimation`]) is generic over
//! [`Scalar`] (`f32` or `f64`); the aliases below fix it to `f64`, which is
//! what the pipeline uses.

// negated comparisons are how NaN inputs get rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bits;
pub mod config;
pub mod entropy;
pub mod estimation;
pub mod extractor;
pub mod formats;
pub mod pipeline;
pub mod randtest;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod sim;

pub use bits::{BitBlock, BitReader, RngSeedSource, SeedSource};
pub use config::{BasisChoice, RunConfig, Seed64, SweepKey, SweepSpec};
pub use extractor::{ExtractionPlan, SessionExtraction};
pub use sampling::{SessionTally, SquashedOutcome};
pub use scalar::Scalar;
pub use sim::{Apparatus, Basis, ClickEvent, ClickPattern, SourceMode};

/// Scalar used by the pipeline.
pub type Real = f64;
pub type Params = entropy::ProtocolParams<Real>;
pub type Params32 = entropy::ProtocolParams<f32>;
pub type SecurityReport = entropy::SecurityReport<Real>;
pub type SecurityReport32 = entropy::SecurityReport<f32>;
pub type Estimation = estimation::EstimationResult<Real>;
pub type Estimation32 = estimation::EstimationResult<f32>;
