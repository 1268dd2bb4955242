//! Touch-augmented Gaussian splatting reconstruction.

pub mod camera;
pub mod error;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod optim;
pub mod render;
pub mod scene;
pub mod spatial;
pub mod touch;
pub mod trainer;

pub use error::{Error, Result};
