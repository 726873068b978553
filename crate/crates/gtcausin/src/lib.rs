//! Traffic speed forecasting on directed sensor graphs.
//!
//! The crate covers the full workflow: ingesting raw speed recordings and
//! sensor distance tables, building random-walk transition matrices over the
//! directed graph, training a forecasting model that combines a causal
//! insight attention layer with graph diffusion convolutions and dilated
//! temporal convolutions, and a statistical pipeline that extracts causal
//! variables from speed variations and validates their correlation
//! structure.
//!
//! Heavy loops run on a rayon thread pool when the default `parallel`
//! feature is enabled and fall back to plain sequential code without it.
//! Both paths produce bit-identical results for any thread count.

pub mod autodiff;
pub mod causal;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod par;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;

pub use cli::cli_main;
pub use error::{Error, Result};
