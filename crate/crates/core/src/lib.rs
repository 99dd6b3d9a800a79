pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod flowhead;
pub mod nn;
pub mod numerics;
pub mod queryar;
pub mod rng;
pub mod train;
pub mod vgtae;

pub use error::{Error, Result};
