pub mod encoders;
pub mod error;
pub mod experience_memory;
pub mod geom;
pub mod harness;
pub mod hsi_diffusion;
pub mod metrics;
pub mod model;
pub mod navigation;
pub mod nn;
pub mod skeleton;
pub mod voxel;

pub use error::{Error, Result};
