//! Multi-iteration, multi-stage training and evaluation of sound event
//! detection systems on heterogeneous datasets (DESED-style strong, weak and
//! unlabeled clips plus MAESTRO-style soft labels), at desk scale.

pub mod augment;
pub mod config;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod postproc;
pub mod pseudo;
pub mod train;
pub mod types;
pub mod vocab;

pub use error::{Error, Result};
