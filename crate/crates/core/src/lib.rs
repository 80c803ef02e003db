pub mod ablate;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod kv;
pub mod nn;
pub mod pifu;
pub mod recon;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
