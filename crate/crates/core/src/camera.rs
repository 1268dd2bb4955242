//! Pinhole camera model, depth unprojection and splat covariance projection.
//!
//! Camera frame follows the usual vision convention: +z forward, +x right,
//! +y down. Pixel `(u, v)` addresses column `u`, row `v`, and integer
//! coordinates sit at pixel centers.

use nalgebra::{Matrix2, Matrix2x3, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};

/// Near-plane distance (meters).
pub const ZNEAR: f64 = 0.01;
/// Added to both diagonal entries of every projected covariance (px²).
pub const DILATION: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let ok = fx > 0.0
            && fy > 0.0
            && width > 0
            && height > 0
            && (0.0..width as f64).contains(&cx)
            && (0.0..height as f64).contains(&cy);
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "invalid intrinsics fx={fx} fy={fy} cx={cx} cy={cy} {width}x{height}"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Square image with the given horizontal field of view (radians).
    pub fn from_fov(size: usize, fov: f64) -> Self {
        let f = 0.5 * size as f64 / (0.5 * fov).tan();
        let c = 0.5 * (size as f64 - 1.0);
        Self { fx: f, fy: f, cx: c, cy: c, width: size, height: size }
    }

    pub fn project(&self, p_cam: &Vec3) -> Vector2<f64> {
        Vector2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        )
    }

    /// Affine approximation of the perspective map at `p_cam`.
    pub fn projection_jacobian(&self, p_cam: &Vec3) -> Matrix2x3<f64> {
        let z = p_cam.z;
        let z2 = z * z;
        Matrix2x3::new(
            self.fx / z,
            0.0,
            -self.fx * p_cam.x / z2,
            0.0,
            self.fy / z,
            -self.fy * p_cam.y / z2,
        )
    }
}

/// Camera-to-world rigid transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub r: Mat3,
    pub t: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Self { r: Mat3::identity(), t: Vec3::zeros() }
    }

    pub fn new(r: Mat3, t: Vec3) -> Result<Self> {
        let ortho = (r.transpose() * r - Mat3::identity()).amax();
        if ortho > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("pose rotation is not in SO(3)".into()));
        }
        Ok(Self { r, t })
    }

    /// Camera at `eye` looking at `target`; `up` picks the roll.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::y());
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        Self { r: Mat3::from_columns(&[right, down, forward]), t: eye }
    }

    /// Rotation taking world vectors into the camera frame.
    pub fn world_to_camera_rotation(&self) -> Mat3 {
        self.r.transpose()
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.r.transpose() * (p - self.t)
    }

    pub fn center(&self) -> Vec3 {
        self.t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl CameraModel {
    /// Unit-direction ray through pixel `(u, v)` in world space.
    pub fn ray(&self, u: f64, v: f64) -> (Vec3, Vec3) {
        let k = &self.intrinsics;
        let d_cam = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        (self.pose.t, (self.pose.r * d_cam).normalize())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    /// Row-major z-depth in meters; 0 means no return.
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, z: f64) {
        self.data[v * self.width + u] = z;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Vec3>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: Vec3) -> Self {
        Self { width, height, data: vec![color; width * height] }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, u: usize, v: usize) -> Vec3 {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, c: Vec3) {
        self.data[v * self.width + u] = c;
    }

    /// 8-bit RGB, values clamped to [0, 1] and mapped linearly.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|c| c.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect::<Vec<_>>())
            .collect()
    }

    pub fn save_png(&self, path: &std::path::Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(())
    }
}

/// Camera-frame points for every pixel with a positive depth.
pub fn unproject(depth: &DepthImage, intr: &Intrinsics) -> Vec<Vec3> {
    let mut out = Vec::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let z = depth.get(u, v);
            if z > 0.0 {
                out.push(Vec3::new(
                    (u as f64 - intr.cx) * z / intr.fx,
                    (v as f64 - intr.cy) * z / intr.fy,
                    z,
                ));
            }
        }
    }
    out
}

pub fn to_world(p_c: &Vec3, pose: &Pose) -> Vec3 {
    pose.r * p_c + pose.t
}

/// Screen-space covariance `J W Σ Wᵀ Jᵀ` plus the dilation floor.
pub fn project_covariance(
    sigma: &Mat3,
    view: &Pose,
    mu_cam: &Vec3,
    intr: &Intrinsics,
) -> Result<Matrix2<f64>> {
    if mu_cam.z <= ZNEAR {
        return Err(Error::BehindCamera(mu_cam.z));
    }
    let w = view.world_to_camera_rotation();
    let j = intr.projection_jacobian(mu_cam);
    let cov = j * (w * sigma * w.transpose()) * j.transpose();
    Ok(cov + Matrix2::identity() * DILATION)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 50.0, 50.0, 101, 101).unwrap()
    }

    #[test]
    fn unproject_examples() {
        let k = intr();
        let mut d = DepthImage::new(k.width, k.height);
        d.set(50, 50, 1.5);
        assert_eq!(unproject(&d, &k), vec![Vec3::new(0.0, 0.0, 1.5)]);

        let k = Intrinsics::new(100.0, 100.0, 50.0, 50.0, 200, 100).unwrap();
        let mut d = DepthImage::new(k.width, k.height);
        d.set(150, 50, 2.0);
        let p = unproject(&d, &k);
        assert_eq!(p.len(), 1);
        assert!((p[0] - Vec3::new(2.0, 0.0, 2.0)).norm() < 1e-15);

        assert!(unproject(&DepthImage::new(8, 8), &intr()).is_empty());
    }

    #[test]
    fn unproject_inverts_projection() {
        let k = intr();
        let p = Vec3::new(0.2, -0.1, 2.0);
        let px = k.project(&p);
        assert!((px.x - px.x.round()).abs() < 1e-9 && (px.y - px.y.round()).abs() < 1e-9);
        let mut d = DepthImage::new(k.width, k.height);
        d.set(px.x.round() as usize, px.y.round() as usize, p.z);
        assert!((unproject(&d, &k)[0] - p).norm() < 1e-12);
    }

    #[test]
    fn to_world_examples() {
        let p = Vec3::new(0.3, 0.4, 0.5);
        assert_eq!(to_world(&p, &Pose::identity()), p);
        let pose = Pose::new(Mat3::identity(), Vec3::new(1.0, 2.0, 3.0)).unwrap();
        assert_eq!(to_world(&Vec3::zeros(), &pose), Vec3::new(1.0, 2.0, 3.0));
        let rz = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), std::f64::consts::FRAC_PI_2);
        let pose = Pose::new(*rz.to_rotation_matrix().matrix(), Vec3::zeros()).unwrap();
        assert!((to_world(&Vec3::x(), &pose) - Vec3::y()).norm() < 1e-15);
        assert!((pose.world_to_camera(&Vec3::y()) - Vec3::x()).norm() < 1e-15);
    }

    #[test]
    fn look_at_points_forward() {
        let pose = Pose::look_at(Vec3::new(3.0, 0.0, 1.0), Vec3::zeros(), Vec3::z());
        let c = pose.world_to_camera(&Vec3::zeros());
        assert!(c.x.abs() < 1e-12 && c.y.abs() < 1e-12 && c.z > 0.0);
        // world up maps to image up (negative camera y)
        assert!(pose.world_to_camera(&Vec3::new(0.0, 0.0, 0.5)).y < 0.0);
        assert!(Pose::new(pose.r, pose.t).is_ok());
        let overhead = Pose::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::zeros(), Vec3::z());
        assert!(Pose::new(overhead.r, overhead.t).is_ok());
    }

    #[test]
    fn on_axis_projection_is_diagonal() {
        let k = intr();
        let mu = Vec3::new(0.0, 0.0, 2.0);
        let cov = project_covariance(&Mat3::identity(), &Pose::identity(), &mu, &k).unwrap();
        assert_eq!(cov[(0, 1)], 0.0);
        assert!((cov[(0, 0)] - (2500.0 + DILATION)).abs() < 1e-9);
    }

    #[test]
    fn behind_camera_rejected() {
        let r = project_covariance(&Mat3::identity(), &Pose::identity(), &Vec3::new(0.0, 0.0, 0.005), &intr());
        assert!(matches!(r, Err(Error::BehindCamera(_))));
    }

    #[test]
    fn projected_covariance_matches_finite_difference_jacobian() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let k = intr();
        for _ in 0..50 {
            let a = Mat3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let sigma = a * a.transpose() + Mat3::identity() * 0.01;
            let rot = UnitQuaternion::from_scaled_axis(Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let pose = Pose::new(*rot.to_rotation_matrix().matrix(), Vec3::new(0.1, 0.2, -0.3)).unwrap();
            let mu = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(1.0..3.0));

            let h = 1e-6;
            let mut jfd = Matrix2x3::zeros();
            for c in 0..3 {
                let mut p = mu;
                p[c] += h;
                let mut m = mu;
                m[c] -= h;
                let col = (k.project(&p) - k.project(&m)) / (2.0 * h);
                jfd.set_column(c, &col);
            }
            let w = pose.world_to_camera_rotation();
            let expected = jfd * w * sigma * w.transpose() * jfd.transpose() + Matrix2::identity() * DILATION;
            let got = project_covariance(&sigma, &pose, &mu, &k).unwrap();
            assert!((got - expected).norm() / expected.norm() < 1e-4);
            assert!((got - got.transpose()).amax() < 1e-9);
            let eig = got.symmetric_eigenvalues();
            assert!(eig.min() >= DILATION - 1e-9);
        }
    }
}
