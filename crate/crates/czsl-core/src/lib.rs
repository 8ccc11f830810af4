//! Continual generalized zero-shot learning with a cosine-similarity GAN.
//!
//! A generator maps noise and class attributes to visual features; a
//! discriminator maps attributes to class identifier projections, and
//! classification is cosine similarity against those projections. Tasks
//! arrive as a schedule of class splits; earlier knowledge is retained by
//! replaying self-filtered generated features and by bi-directional
//! alignment losses between class means, projections, and attributes.

pub mod config;
pub mod continual;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod nn;

pub use config::RunConfig;
pub use continual::{run_experiment, Setting, TaskSchedule};
pub use data::Dataset;
pub use error::{Error, Result};
pub use eval::ExperimentReport;
pub use model::{classify, CGZSLModel, ClassId, ModelConfig};
pub use nn::Matrix;
