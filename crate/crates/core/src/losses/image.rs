use serde::{Deserialize, Serialize};

use super::ssim::ssim;
use crate::camera::RgbImage;
use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Weight of the structural term against L1, in [0, 1].
    pub lambda_ssim: f64,
    pub lambda_touch: f64,
    /// Nearest neighbors paired with each primitive in the touch region.
    pub neighbor_count: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_ssim: 0.2, lambda_touch: 1.0, neighbor_count: 3 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_ssim) || self.lambda_touch < 0.0 || self.neighbor_count == 0 {
            return Err(Error::InvalidConfig(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ImageLoss {
    pub value: f64,
    /// dL/d(rendered) per pixel.
    pub grad: Vec<Vec3>,
}

/// `(1 − λ)·mean|Î − I| + λ·(1 − SSIM(Î, I))`.
pub fn image_loss(rendered: &RgbImage, truth: &RgbImage, w: &LossWeights) -> Result<ImageLoss> {
    if rendered.dims() != truth.dims() {
        return Err(Error::DimensionMismatch(rendered.dims(), truth.dims()));
    }
    let n = (rendered.data.len() * 3) as f64;
    let lambda = w.lambda_ssim;
    let mut l1 = 0.0;
    let mut grad: Vec<Vec3> = rendered
        .data
        .iter()
        .zip(&truth.data)
        .map(|(r, t)| {
            let d = r - t;
            l1 += d.abs().sum();
            d.map(|v| if v == 0.0 { 0.0 } else { (1.0 - lambda) * v.signum() / n })
        })
        .collect();
    let mut value = (1.0 - lambda) * l1 / n;
    if lambda > 0.0 {
        let (s, g) = ssim(rendered, truth, true);
        value += lambda * (1.0 - s);
        for (acc, gs) in grad.iter_mut().zip(g.unwrap()) {
            *acc -= gs * lambda;
        }
    }
    Ok(ImageLoss { value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RgbImage {
        RgbImage {
            width: w,
            height: h,
            data: (0..w * h)
                .map(|_| Vec3::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
                .collect(),
        }
    }

    /// Direct windowed sums over the full 11×11 window, zero outside the image.
    fn reference_ssim(a: &RgbImage, b: &RgbImage) -> f64 {
        let (w, h) = a.dims();
        let mut win = [[0.0; 11]; 11];
        let mut sum = 0.0;
        for i in 0..11 {
            for j in 0..11 {
                let (dx, dy) = (i as f64 - 5.0, j as f64 - 5.0);
                win[i][j] = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
                sum += win[i][j];
            }
        }
        let mut total = 0.0;
        for c in 0..3 {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11isize {
                        for j in 0..11isize {
                            let (sx, sy) = (x + i - 5, y + j - 5);
                            if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                                continue;
                            }
                            let wt = win[i as usize][j as usize] / sum;
                            let p = a.get(sx as usize, sy as usize)[c];
                            let q = b.get(sx as usize, sy as usize)[c];
                            mx += wt * p;
                            my += wt * q;
                            xx += wt * p * p;
                            yy += wt * q * q;
                            xy += wt * p * q;
                        }
                    }
                    let c1 = 1e-4;
                    let c2 = 9e-4;
                    total += ((2.0 * mx * my + c1) * (2.0 * (xy - mx * my) + c2))
                        / ((mx * mx + my * my + c1) * (xx - mx * mx + yy - my * my + c2));
                }
            }
        }
        total / (3 * w * h) as f64
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 12, 12);
        let l = image_loss(&a, &a, &LossWeights::default()).unwrap();
        assert!(l.value.abs() < 1e-12);
    }

    #[test]
    fn pure_l1_on_constant_offset() {
        let a = RgbImage::filled(6, 5, Vec3::repeat(0.3));
        let b = RgbImage::filled(6, 5, Vec3::repeat(0.4));
        let w = LossWeights { lambda_ssim: 0.0, ..Default::default() };
        assert!((image_loss(&a, &b, &w).unwrap().value - 0.1).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_window_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_image(&mut rng, 32, 32);
        let b = random_image(&mut rng, 32, 32);
        let l1: f64 = a.data.iter().zip(&b.data).map(|(p, q)| (p - q).abs().sum()).sum::<f64>() / (32.0 * 32.0 * 3.0);
        let expected = 0.8 * l1 + 0.2 * (1.0 - reference_ssim(&a, &b));
        let got = image_loss(&a, &b, &LossWeights::default()).unwrap().value;
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
        assert!(got >= 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let a = RgbImage::filled(4, 4, Vec3::zeros());
        let b = RgbImage::filled(4, 5, Vec3::zeros());
        assert!(matches!(image_loss(&a, &b, &LossWeights::default()), Err(Error::DimensionMismatch(..))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_image(&mut rng, 8, 8);
        let b = random_image(&mut rng, 8, 8);
        let w = LossWeights::default();
        let g = image_loss(&a, &b, &w).unwrap().grad;
        let h = 1e-6;
        for p in [0usize, 9, 27, 63] {
            for c in 0..3 {
                let mut ap = a.clone();
                ap.data[p][c] += h;
                let mut am = a.clone();
                am.data[p][c] -= h;
                let fd = (image_loss(&ap, &b, &w).unwrap().value - image_loss(&am, &b, &w).unwrap().value) / (2.0 * h);
                assert!((fd - g[p][c]).abs() < 1e-7, "{fd} vs {}", g[p][c]);
            }
        }
    }
}
