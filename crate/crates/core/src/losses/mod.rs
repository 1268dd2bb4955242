//! Photometric and geometric training objectives.

mod image;
pub mod ssim;
mod touch;

pub use image::{image_loss, ImageLoss, LossWeights};
pub use touch::{build_pair_set, touch_loss, TouchLoss};

/// `L_image + lambda_touch · L_touch`.
pub fn total_loss(image_part: f64, touch_part: f64, w: &LossWeights) -> f64 {
    image_part + w.lambda_touch * touch_part
}
