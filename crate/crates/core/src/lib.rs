pub mod config;
pub mod corpus;
pub mod cli;
pub mod ecg;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod hgt;
pub mod model;
pub mod nn;
pub mod params;
pub mod renderer;
pub mod synthesizer;
pub mod tape;
pub mod train;

pub use error::{EcssError, Result};
