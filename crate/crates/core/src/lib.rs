//! # seddet
//!
//! Joint training of a polyphonic sound event detector from weakly-labeled
//! "real" clips and strongly-labeled "synthetic" clips, with metric-learning
//! domain adaptation via an inter-frame distance loss.
//!
//! The crate is organized around five subsystems:
//!
//! - [`corpus`] -- a procedural two-domain soundscape generator with
//!   controlled domain shift, label conversions, and a log-mel front end;
//! - [`model`] -- a CNN frame encoder with an attention-pooling tagging
//!   branch, a domain projection, and a frame-level detection head, all with
//!   hand-derived backward passes;
//! - [`ifd`] -- clip-pair classification, pseudo strong labels, frame-pair
//!   sampling, and the inter-frame distance loss;
//! - [`metrics`] -- median-filter post-processing, frame/event codecs, and
//!   event-based / tagging macro F1;
//! - [`trainer`] -- the mixed-domain optimization loop, experiment runner, and
//!   the four-system ablation harness.
//!
//! All numeric code is generic over the scalar type via the [`Real`] trait;
//! `f32` is the default for training speed, `f64` is used where reference
//! accuracy matters (gradient checks, oracle comparisons).

pub mod config;
pub mod corpus;
pub mod error;
pub mod ifd;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod trainer;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use scalar::{real, Real};

/// Scalar type used by the CLI and the desk-scale experiment paths.
pub type DefaultReal = f32;

/// Model instantiated at the default scalar type.
pub type DefaultModel = model::SedModel<DefaultReal>;

/// Feature matrix at the default scalar type.
pub type DefaultFeatureMatrix = corpus::FeatureMatrix<DefaultReal>;
