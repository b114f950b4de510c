pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod exemplar;
pub mod geometry;
pub mod raster;
pub mod synth;

pub use error::{Error, Result};
