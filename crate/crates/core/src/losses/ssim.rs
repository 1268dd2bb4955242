//! Gaussian-window SSIM with its gradient.
//!
//! Local statistics are zero-padded separable convolutions with an 11×11
//! Gaussian window (σ = 1.5). The score is the mean SSIM map over all pixels
//! and channels, for images in the [0, 1] range.

use crate::camera::RgbImage;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

pub fn gaussian_kernel() -> [f64; WINDOW] {
    let half = (WINDOW / 2) as f64;
    let mut k = [0.0; WINDOW];
    for (i, w) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *w = (-x * x / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

/// Zero-padded "same" convolution with the separable window.
fn blur(src: &[f64], width: usize, height: usize, kernel: &[f64; WINDOW]) -> Vec<f64> {
    let half = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, w) in kernel.iter().enumerate() {
                let sx = x as isize + i as isize - half;
                if sx >= 0 && (sx as usize) < width {
                    acc += w * src[y * width + sx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, w) in kernel.iter().enumerate() {
                let sy = y as isize + i as isize - half;
                if sy >= 0 && (sy as usize) < height {
                    acc += w * tmp[sy as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

fn channel(img: &RgbImage, c: usize) -> Vec<f64> {
    img.data.iter().map(|p| p[c]).collect()
}

/// Mean SSIM of `x` against `y`, and optionally d(SSIM)/dx per pixel.
pub fn ssim(x: &RgbImage, y: &RgbImage, want_grad: bool) -> (f64, Option<Vec<nalgebra::Vector3<f64>>>) {
    let (w, h) = x.dims();
    let n = (w * h) as f64;
    let kernel = gaussian_kernel();
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![nalgebra::Vector3::zeros(); w * h]);
    for c in 0..3 {
        let xs = channel(x, c);
        let ys = channel(y, c);
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mx = blur(&xs, w, h, &kernel);
        let my = blur(&ys, w, h, &kernel);
        let exx = blur(&sq(&xs, &xs), w, h, &kernel);
        let eyy = blur(&sq(&ys, &ys), w, h, &kernel);
        let exy = blur(&sq(&xs, &ys), w, h, &kernel);

        let mut d_mx = vec![0.0; w * h];
        let mut d_exx = vec![0.0; w * h];
        let mut d_exy = vec![0.0; w * h];
        for p in 0..w * h {
            let (ux, uy) = (mx[p], my[p]);
            let n1 = 2.0 * ux * uy + C1;
            let n2 = 2.0 * (exy[p] - ux * uy) + C2;
            let d1 = ux * ux + uy * uy + C1;
            let d2 = (exx[p] - ux * ux) + (eyy[p] - uy * uy) + C2;
            let den = d1 * d2;
            let s = n1 * n2 / den;
            total += s;
            if want_grad {
                let d_n1 = 2.0 * uy;
                let d_n2 = -2.0 * uy;
                let d_d1 = 2.0 * ux;
                let d_d2 = -2.0 * ux;
                d_mx[p] = ((d_n1 * n2 + n1 * d_n2) * den - n1 * n2 * (d_d1 * d2 + d1 * d_d2)) / (den * den);
                d_exx[p] = -n1 * n2 * d1 / (den * den);
                d_exy[p] = 2.0 * n1 / den;
            }
        }
        if let Some(g) = grad.as_mut() {
            // the zero-padded symmetric blur is self-adjoint
            let a = blur(&d_mx, w, h, &kernel);
            let b = blur(&d_exx, w, h, &kernel);
            let e = blur(&d_exy, w, h, &kernel);
            for p in 0..w * h {
                g[p][c] = (a[p] + 2.0 * xs[p] * b[p] + ys[p] * e[p]) / (3.0 * n);
            }
        }
    }
    (total / (3.0 * n), grad)
}
