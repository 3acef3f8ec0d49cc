//! Low-thrust transfer dataset generation and feasibility classification.

pub mod astro;
pub mod augment;
pub mod baselines;
pub mod datagen;
pub mod dnn;
pub mod error;
pub mod features;
pub mod hyperopt;
pub mod metrics;
pub mod nlp;
pub mod pipeline;
pub mod sft;
pub mod units;

pub use error::{Error, Result};
