//! Geometry and labeling toolkit for composing perspective shots out of
//! 360° equirectangular panoramas.

pub mod candidates;
pub mod error;
pub mod gradcheck;
pub mod labeling;
pub mod manifest;
pub mod metrics;
pub mod model_math;
mod linalg;
pub mod pipeline;
pub mod projection;
pub mod scene;
pub mod sphere;
pub mod synth;

pub use error::{Error, Result};
