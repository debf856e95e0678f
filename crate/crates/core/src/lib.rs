pub mod analytics;
pub mod cli;
pub mod error;
pub mod mnist;
pub mod nn;
pub mod pairs;
pub mod pipeline;
pub mod quiz;
pub mod raster;
pub mod repr;
pub mod tsne;

pub use error::{Error, Result};
