//! Goal-conditioned multi-modal trajectory forecasting on rasterized
//! intersection scenes.

pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod gradcheck;
pub mod grid;
pub mod losses;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod predictor;
pub mod raster;
pub mod relnet;
pub mod sample;
pub mod scenegen;
pub mod util;

pub use error::{Error, Result};
