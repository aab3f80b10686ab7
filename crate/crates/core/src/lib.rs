pub mod accountant;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod mechanism;
pub mod models;
pub mod rng;
pub mod trainers;

pub use error::{Error, Result};
