pub mod cohort;
pub mod config;
pub mod cv;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod impact;
pub mod importance;
pub mod labeling;
pub mod models;
pub mod nn;
pub mod preprocess;
pub mod report;

pub use error::{Error, Result};
