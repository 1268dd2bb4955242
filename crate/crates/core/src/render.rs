//! CPU software rasterizer for Gaussian splats and its reverse-mode pass.
//!
//! Splats are globally sorted front-to-back by camera-space center depth and
//! blended per pixel as `c = Σ Tᵢ αᵢ cᵢ + T_final · background`, with
//! `αᵢ = min(0.99, opacityᵢ · exp(−½ dᵀ Σ_p⁻¹ d))`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector4};

use crate::camera::{CameraModel, RgbImage, DILATION, ZNEAR};
use crate::error::{Error, Result};
use crate::geometry::{covariance, quat_backward, GaussianPrimitive, Mat3, Vec3};

pub const ALPHA_MAX: f64 = 0.99;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Footprint half-extent in standard deviations.
pub const CULL_SIGMA: f64 = 3.0;
pub const DEFAULT_BACKGROUND: [f64; 3] = [0.5, 0.5, 0.5];

#[derive(Clone, Debug)]
pub struct RenderBuffers {
    pub color: RgbImage,
    /// Residual transmittance per pixel after blending.
    pub transmittance: Vec<f64>,
    pub blend_count: Vec<u32>,
    fingerprint: u64,
}

/// Screen-space footprint of one primitive.
#[derive(Clone, Debug)]
pub(crate) struct Splat {
    pub index: usize,
    pub mu_cam: Vec3,
    pub mean: Vector2<f64>,
    pub cov_cam: Mat3,
    pub jacobian: Matrix2x3<f64>,
    pub conic: Matrix2<f64>,
    pub u_range: (usize, usize),
    pub v_range: (usize, usize),
}

/// Gradient of a scalar loss with respect to one primitive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianGrad {
    pub mu: Vec3,
    /// Raw quaternion, ordered (w, x, y, z).
    pub rotation: Vector4<f64>,
    pub scales: Vec3,
    pub opacity: f64,
    pub color: Vec3,
}

impl Default for GaussianGrad {
    fn default() -> Self {
        Self {
            mu: Vec3::zeros(),
            rotation: Vector4::zeros(),
            scales: Vec3::zeros(),
            opacity: 0.0,
            color: Vec3::zeros(),
        }
    }
}

impl GaussianGrad {
    pub fn add_scaled(&mut self, other: &GaussianGrad, s: f64) {
        self.mu += other.mu * s;
        self.rotation += other.rotation * s;
        self.scales += other.scales * s;
        self.opacity += other.opacity * s;
        self.color += other.color * s;
    }

    pub fn clear_geometry(&mut self) {
        self.mu = Vec3::zeros();
        self.rotation = Vector4::zeros();
        self.scales = Vec3::zeros();
    }

    pub fn is_zero(&self) -> bool {
        self.mu == Vec3::zeros()
            && self.rotation == Vector4::zeros()
            && self.scales == Vec3::zeros()
            && self.opacity == 0.0
            && self.color == Vec3::zeros()
    }
}

fn fingerprint(gaussians: &[GaussianPrimitive], camera: &CameraModel, background: &Vec3) -> u64 {
    let mut h = DefaultHasher::new();
    gaussians.len().hash(&mut h);
    let mut put = |v: f64| v.to_bits().hash(&mut h);
    for g in gaussians {
        g.mu.iter().chain(g.scales.iter()).chain(g.color.iter()).for_each(|&v| put(v));
        g.rotation.coords.iter().for_each(|&v| put(v));
        put(g.opacity);
    }
    camera.pose.r.iter().chain(camera.pose.t.iter()).for_each(|&v| put(v));
    let k = &camera.intrinsics;
    [k.fx, k.fy, k.cx, k.cy, k.width as f64, k.height as f64].into_iter().for_each(&mut put);
    background.iter().for_each(|&v| put(v));
    h.finish()
}

/// Projects, culls and depth-sorts the primitives for one view.
pub(crate) fn prepare_splats(gaussians: &[GaussianPrimitive], camera: &CameraModel) -> Vec<Splat> {
    let k = &camera.intrinsics;
    let w = camera.pose.world_to_camera_rotation();
    let mut splats: Vec<Splat> = gaussians
        .iter()
        .enumerate()
        .filter_map(|(index, g)| {
            let mu_cam = camera.pose.world_to_camera(&g.mu);
            if mu_cam.z <= ZNEAR {
                return None;
            }
            let cov_cam = w * covariance(g) * w.transpose();
            let jacobian = k.projection_jacobian(&mu_cam);
            let cov2d = jacobian * cov_cam * jacobian.transpose() + Matrix2::identity() * DILATION;
            let conic = cov2d.try_inverse()?;
            let mean = k.project(&mu_cam);
            let ru = CULL_SIGMA * cov2d[(0, 0)].sqrt();
            let rv = CULL_SIGMA * cov2d[(1, 1)].sqrt();
            let u0 = (mean.x - ru).ceil().max(0.0);
            let u1 = (mean.x + ru).floor().min(k.width as f64 - 1.0);
            let v0 = (mean.y - rv).ceil().max(0.0);
            let v1 = (mean.y + rv).floor().min(k.height as f64 - 1.0);
            if !(u0 <= u1 && v0 <= v1) {
                return None;
            }
            Some(Splat {
                index,
                mu_cam,
                mean,
                cov_cam,
                jacobian,
                conic,
                u_range: (u0 as usize, u1 as usize),
                v_range: (v0 as usize, v1 as usize),
            })
        })
        .collect();
    splats.sort_by(|a, b| a.mu_cam.z.total_cmp(&b.mu_cam.z).then(a.index.cmp(&b.index)));
    splats
}

/// Per-pixel lists of splat slots (indices into the sorted splat list), front to back.
fn bin_splats(splats: &[Splat], width: usize, height: usize) -> Vec<Vec<u32>> {
    let mut bins = vec![Vec::new(); width * height];
    for (slot, s) in splats.iter().enumerate() {
        for v in s.v_range.0..=s.v_range.1 {
            for u in s.u_range.0..=s.u_range.1 {
                bins[v * width + u].push(slot as u32);
            }
        }
    }
    bins
}

#[inline]
fn splat_alpha(s: &Splat, opacity: f64, u: usize, v: usize) -> (f64, f64, Vector2<f64>) {
    let d = Vector2::new(u as f64, v as f64) - s.mean;
    let power = -0.5 * d.dot(&(s.conic * d));
    let gauss = power.exp();
    (opacity * gauss, gauss, d)
}

pub fn render(gaussians: &[GaussianPrimitive], camera: &CameraModel, background: &Vec3) -> RenderBuffers {
    let (width, height) = (camera.intrinsics.width, camera.intrinsics.height);
    let splats = prepare_splats(gaussians, camera);
    let bins = bin_splats(&splats, width, height);

    let mut color = RgbImage::filled(width, height, Vec3::zeros());
    let mut transmittance = vec![1.0; width * height];
    let mut blend_count = vec![0u32; width * height];
    for v in 0..height {
        for u in 0..width {
            let px = v * width + u;
            let mut c = Vec3::zeros();
            let mut t = 1.0;
            let mut count = 0;
            for &slot in &bins[px] {
                let s = &splats[slot as usize];
                let g = &gaussians[s.index];
                let (raw, _, _) = splat_alpha(s, g.opacity, u, v);
                let alpha = raw.min(ALPHA_MAX);
                c += g.color * (t * alpha);
                t *= 1.0 - alpha;
                count += 1;
                if t < TRANSMITTANCE_MIN {
                    break;
                }
            }
            color.data[px] = c + background * t;
            transmittance[px] = t;
            blend_count[px] = count;
        }
    }
    RenderBuffers {
        color,
        transmittance,
        blend_count,
        fingerprint: fingerprint(gaussians, camera, background),
    }
}

/// Per-splat screen-space gradient accumulators.
#[derive(Clone, Copy, Default)]
struct ScreenGrad {
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    opacity: f64,
    color: Vec3,
}

/// Reverse pass of [`render`] for an upstream per-pixel gradient `d_image`.
///
/// Locked primitives receive zero geometric gradients; appearance gradients
/// are still reported for them.
pub fn render_backward(
    gaussians: &[GaussianPrimitive],
    camera: &CameraModel,
    background: &Vec3,
    buffers: &RenderBuffers,
    d_image: &[Vec3],
) -> Result<Vec<GaussianGrad>> {
    let (width, height) = (camera.intrinsics.width, camera.intrinsics.height);
    if buffers.color.dims() != (width, height)
        || d_image.len() != width * height
        || buffers.fingerprint != fingerprint(gaussians, camera, background)
    {
        return Err(Error::BufferMismatch);
    }
    let splats = prepare_splats(gaussians, camera);
    let bins = bin_splats(&splats, width, height);
    let mut screen = vec![ScreenGrad::default(); splats.len()];

    let mut alphas = Vec::new();
    for v in 0..height {
        for u in 0..width {
            let px = v * width + u;
            let upstream = d_image[px];
            if upstream == Vec3::zeros() {
                continue;
            }
            let n = buffers.blend_count[px] as usize;
            let list = &bins[px][..n];
            alphas.clear();
            let mut t = 1.0;
            for &slot in list {
                let s = &splats[slot as usize];
                let (raw, gauss, d) = splat_alpha(s, gaussians[s.index].opacity, u, v);
                alphas.push((raw, gauss, d, t));
                t *= 1.0 - raw.min(ALPHA_MAX);
            }
            // suffix color behind the current splat, starting with the background
            let mut behind = background * t;
            for (k, &slot) in list.iter().enumerate().rev() {
                let s = &splats[slot as usize];
                let g = &gaussians[s.index];
                let (raw, gauss, d, t_i) = alphas[k];
                let alpha = raw.min(ALPHA_MAX);
                let sg = &mut screen[slot as usize];
                sg.color += upstream * (t_i * alpha);
                let d_alpha = upstream.dot(&(g.color * t_i - behind / (1.0 - alpha)));
                behind += g.color * (t_i * alpha);
                if raw >= ALPHA_MAX {
                    continue;
                }
                sg.opacity += d_alpha * gauss;
                let d_power = d_alpha * raw;
                sg.mean += (s.conic * d) * d_power;
                sg.conic += (d * d.transpose()) * (-0.5 * d_power);
            }
        }
    }

    let intr = &camera.intrinsics;
    let w = camera.pose.world_to_camera_rotation();
    let mut grads = vec![GaussianGrad::default(); gaussians.len()];
    for (slot, s) in splats.iter().enumerate() {
        let sg = &screen[slot];
        let g = &gaussians[s.index];
        let out = &mut grads[s.index];
        out.color = sg.color;
        out.opacity = sg.opacity;
        if g.locked {
            continue;
        }
        let j = &s.jacobian;
        let d_cov2d = -(s.conic * sg.conic * s.conic);
        let d_cov_cam = j.transpose() * d_cov2d * j;
        let d_j = d_cov2d * j * s.cov_cam * 2.0;

        let (x, y, z) = (s.mu_cam.x, s.mu_cam.y, s.mu_cam.z);
        let (fx, fy) = (intr.fx, intr.fy);
        let z2 = z * z;
        let z3 = z2 * z;
        let mut d_mu_cam = j.transpose() * sg.mean;
        d_mu_cam.x += d_j[(0, 2)] * (-fx / z2);
        d_mu_cam.y += d_j[(1, 2)] * (-fy / z2);
        d_mu_cam.z += d_j[(0, 0)] * (-fx / z2)
            + d_j[(0, 2)] * (2.0 * fx * x / z3)
            + d_j[(1, 1)] * (-fy / z2)
            + d_j[(1, 2)] * (2.0 * fy * y / z3);
        out.mu = w.transpose() * d_mu_cam;

        let d_sigma = w.transpose() * d_cov_cam * w;
        let rot = g.rotation_matrix();
        let s2 = Mat3::from_diagonal(&g.scales.component_mul(&g.scales));
        let d_rot = d_sigma * rot * s2 * 2.0;
        let local = rot.transpose() * d_sigma * rot;
        out.scales = Vec3::from_fn(|k, _| 2.0 * g.scales[k] * local[(k, k)]);
        out.rotation = quat_backward(&g.rotation, &d_rot);
    }
    Ok(grads)
}
