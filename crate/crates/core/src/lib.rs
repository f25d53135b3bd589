//! Data model, lexicon, error injection, metrics and baseline detectors for
//! instruction-error detection in navigation episodes.

pub mod baselines;
pub mod error;
pub mod io;
pub mod lexicon;
pub mod metrics;
pub mod perturber;
pub mod rng;
pub mod text;
pub mod types;

pub use error::{Error, Result};
pub use lexicon::Lexicon;
pub use types::*;
