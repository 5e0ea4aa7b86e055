//! Radio map estimation toolkit: synthetic map generation, a suite of
//! spatial estimators, hyperparameter training, and a seeded Monte-Carlo
//! benchmark harness.

pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod geo;
pub mod io;
pub mod rng;
pub mod synth;
pub mod training;

pub use error::{Result, RmeError};
