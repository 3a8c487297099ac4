//! Monocular depth estimation with a frequency-band pyramid.
//!
//! An RGB image is split into radial frequency bands. A small backbone
//! predicts depth from the lowest band and a cascade of refinement modules
//! adds detail from each higher band, lowest first.

pub mod data;
pub mod error;
pub mod experiments;
pub mod loss_metrics;
pub mod model;
pub mod nn;
pub mod spectral;
pub mod tensor;
pub mod training;

pub use error::{PfnError, Result};
pub use tensor::{DepthMap, FeatureMap, Mask, Planes, RgbImage};
