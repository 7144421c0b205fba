//! Core library for the ETA post-processing system: a residual network that
//! refines routing-engine ETAs, together with the geospatial feature-hashing
//! stack, the discretization pipeline, training, evaluation, and a synthetic
//! trip generator.

pub mod attn;
pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod features;
pub mod geo;
pub mod loss;
pub mod model;
pub mod num;
pub mod rng;
pub mod synth;
pub mod train;

pub use features::{FeatureSchema, RawRequest, RequestType, TokenIndexes};
pub use geo::GeoPoint;
pub use model::{ModelConfig, ModelParams};
pub use synth::TripRecord;
