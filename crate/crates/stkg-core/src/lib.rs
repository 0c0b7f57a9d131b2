//! Spatio-temporal kriging: inferring the complete time series of sensors that
//! were never observed, from the series of known sensors plus spatial metadata.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod evalharness;
pub mod graph;
pub mod metagraph;
pub mod model;
pub mod nn;
pub mod phase;
pub mod spectral;
pub mod training;

mod error;

pub use autodiff::{AdamState, DiffTensor, GradCheckReport, Gradients, ParamId, ParamStore, Tape};
pub use config::{Ablation, FileConfig, ModelConfig, PhaseConfig, PhaseMode, TrainConfig};
pub use error::{Error, Result};
pub use graph::Adjacency;
pub use spectral::{Decomposition, Spectrum};
