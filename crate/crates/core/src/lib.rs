//! Reliable, equity-aware aggregation of black-box language model outputs.
//!
//! The pipeline samples `m` outputs from a generator, embeds them, scores
//! each one's demographic bias, and returns the sample closest to a
//! bias-weighted centroid, alongside the sample closest to the plain
//! centroid and the least biased sample.
//!
//! ```text
//! sampling::collect_samples -> selection::select -> report
//!          |                        |
//!     providers (LLM, embedder)   equity (group vectors, bias, weights)
//!                                 vector (cosine, centroids, nearest)
//! ```

pub mod cli;
pub mod config;
pub mod equity;
pub mod error;
pub mod evalkit;
pub mod pipeline;
pub mod providers;
pub mod sampling;
pub mod selection;
pub mod vector;

pub use equity::{BiasMode, BiasReport, DemographicGroup, GroupFile, GroupSet};
pub use error::{RequalError, Result};
pub use pipeline::{run_campaign, run_once, RunOutcome, RunReport};
pub use sampling::{collect_samples, OutputSample, SampleCollection, SamplingPlan, TaskSpec};
pub use selection::{select, SelectionResult};
pub use vector::{EmbeddingVector, WeightVector};
