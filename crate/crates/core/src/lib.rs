//! Volumetric segmentation from frozen 2D slice embeddings and a light 3D decoder.

pub mod cli;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod nn;
pub mod objective;
pub mod toy;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
