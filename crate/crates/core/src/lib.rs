//! Foundation-model toolkit for EHR event sequences with polygenic risk
//! score conditioning.

pub mod cohort;
pub mod error;
pub mod evalstats;
pub mod generate;
pub mod model;
pub mod prs;
pub mod rng;
pub mod stats;
pub mod tokenizer;
pub mod transfer;
pub mod train;

pub use error::{Error, Result};
