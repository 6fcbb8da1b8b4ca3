pub mod agent;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod env;
pub mod error;
pub mod eval;
pub mod importance;
pub mod io;
pub mod pgm;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
