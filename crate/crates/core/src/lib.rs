pub mod datasets;
pub mod error;
pub mod eval;
pub mod fed;
pub mod fusion;
pub mod harness;
pub mod nn;
pub mod seed;

pub use error::{Error, Result};
