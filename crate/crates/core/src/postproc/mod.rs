//! Posteriorgram post-processing: class-wise median filtering and sound event
//! bounding boxes with grid-searched parameters.

pub mod median;
pub mod sebb;
pub mod tune;

pub use median::{median_filter, median_row, DEFAULT_MEDIAN_WINDOW};
pub use sebb::{sebb_detect, sebb_row, step_response, SebbParams};
pub use tune::{
    abs_grid, format_sebb_tsv, parse_sebb_tsv, rel_grid, sebb_grid, step_grid, tune_sebb,
};
