//! Ellipsoid math for Gaussian primitives.
//!
//! A primitive's covariance is `R diag(a², b², c²) Rᵀ`; its unit-level ellipsoid
//! is `(x − μ)ᵀ M (x − μ) = 1` with `M = R diag(a⁻², b⁻², c⁻²) Rᵀ`. The
//! directional radius along a unit direction `v̂` is `1 / sqrt(v̂ᵀ M v̂)`.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Degeneracy threshold for directions and center distances (meters).
pub const EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Visual,
    Touch,
}

impl Origin {
    pub fn tag(self) -> u8 {
        match self {
            Origin::Visual => 0,
            Origin::Touch => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub mu: Vec3,
    /// Stored unnormalized; every consumer goes through [`GaussianPrimitive::rotation_matrix`].
    pub rotation: Quaternion<f64>,
    pub scales: Vec3,
    pub opacity: f64,
    pub color: Vec3,
    /// Geometry (mu, rotation, scales) is frozen when set.
    pub locked: bool,
    pub origin: Origin,
}

impl GaussianPrimitive {
    /// Unlocked, visually-derived primitive.
    pub fn new(
        mu: Vec3,
        rotation: UnitQuaternion<f64>,
        scales: Vec3,
        opacity: f64,
        color: Vec3,
    ) -> Result<Self> {
        let g = Self {
            mu,
            rotation: rotation.into_inner(),
            scales,
            opacity,
            color,
            locked: false,
            origin: Origin::Visual,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn isotropic(mu: Vec3, scale: f64, opacity: f64, color: Vec3) -> Result<Self> {
        Self::new(
            mu,
            UnitQuaternion::identity(),
            Vec3::repeat(scale),
            opacity,
            color,
        )
    }

    /// Touch-spawned primitive: always locked.
    pub fn touch(
        mu: Vec3,
        rotation: UnitQuaternion<f64>,
        scales: Vec3,
        opacity: f64,
        color: Vec3,
    ) -> Result<Self> {
        let mut g = Self::new(mu, rotation, scales, opacity, color)?;
        g.locked = true;
        g.origin = Origin::Touch;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.mu.iter().all(|v| v.is_finite())
            && self.scales.iter().all(|v| v.is_finite())
            && self.color.iter().all(|v| v.is_finite())
            && self.rotation.coords.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidPrimitive("non-finite parameter".into()));
        }
        if self.rotation.norm() <= EPS {
            return Err(Error::InvalidPrimitive("zero quaternion".into()));
        }
        if self.scales.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidPrimitive(format!(
                "scales must be positive, got {:?}",
                self.scales.as_slice()
            )));
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(Error::InvalidPrimitive(format!(
                "opacity {} outside (0, 1]",
                self.opacity
            )));
        }
        if self.color.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(Error::InvalidPrimitive("color outside [0, 1]".into()));
        }
        if self.origin == Origin::Touch && !self.locked {
            return Err(Error::InvalidPrimitive(
                "touch primitives must be locked".into(),
            ));
        }
        Ok(())
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_matrix(&self.rotation)
    }

    pub fn unit_rotation(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_quaternion(self.rotation)
    }
}

/// Rotation matrix of `q / |q|`.
pub fn quat_to_matrix(q: &Quaternion<f64>) -> Mat3 {
    let n = q.norm();
    let (w, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls `dL/dR` back to the raw (unnormalized) quaternion, ordered `(w, x, y, z)`.
pub fn quat_backward(q: &Quaternion<f64>, d_rot: &Mat3) -> Vector4<f64> {
    let n = q.norm();
    let (w, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    let dw = Mat3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0;
    let dx = Mat3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0;
    let dy = Mat3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0;
    let dz = Mat3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0;
    let g_unit = Vector4::new(
        d_rot.component_mul(&dw).sum(),
        d_rot.component_mul(&dx).sum(),
        d_rot.component_mul(&dy).sum(),
        d_rot.component_mul(&dz).sum(),
    );
    let q_hat = Vector4::new(w, x, y, z);
    (g_unit - q_hat * q_hat.dot(&g_unit)) / n
}

pub fn covariance(g: &GaussianPrimitive) -> Mat3 {
    let r = g.rotation_matrix();
    let s2 = g.scales.component_mul(&g.scales);
    r * Mat3::from_diagonal(&s2) * r.transpose()
}

/// Symmetric positive-definite matrix of the unit-level ellipsoid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipsoidMatrix {
    pub m: Mat3,
}

impl EllipsoidMatrix {
    /// Value of `xᵀ M x` for an offset from the center.
    pub fn quadratic(&self, offset: &Vec3) -> f64 {
        offset.dot(&(self.m * offset))
    }
}

pub fn ellipsoid_matrix(g: &GaussianPrimitive) -> EllipsoidMatrix {
    let r = g.rotation_matrix();
    let inv = g.scales.map(|s| 1.0 / (s * s));
    EllipsoidMatrix {
        m: r * Mat3::from_diagonal(&inv) * r.transpose(),
    }
}

/// Distance from the center to the ellipsoid surface along `v` (normalized internally).
pub fn directional_radius(g: &GaussianPrimitive, v: &Vec3) -> Result<f64> {
    let n = v.norm();
    if n <= EPS {
        return Err(Error::DegenerateDirection(n));
    }
    let u = v / n;
    Ok(1.0 / ellipsoid_matrix(g).quadratic(&u).sqrt())
}

/// Signed gap along the center line: positive apart, negative overlapping, zero tangent.
pub fn pair_gap(gi: &GaussianPrimitive, gj: &GaussianPrimitive) -> Result<f64> {
    let v = gi.mu - gj.mu;
    let d = v.norm();
    if d <= EPS {
        return Err(Error::CoincidentCenters(d));
    }
    Ok(d - directional_radius(gi, &v)? - directional_radius(gj, &v)?)
}

/// Partial derivatives of the directional radius.
#[derive(Clone, Copy, Debug)]
pub struct RadiusGrad {
    pub radius: f64,
    /// d r / d v for the raw (unnormalized) direction.
    pub d_dir: Vec3,
    /// d r / d R, to be pulled back through [`quat_backward`].
    pub d_rot: Mat3,
    pub d_scales: Vec3,
}

pub fn directional_radius_grad(g: &GaussianPrimitive, v: &Vec3) -> Result<RadiusGrad> {
    let n = v.norm();
    if n <= EPS {
        return Err(Error::DegenerateDirection(n));
    }
    let u = v / n;
    let rot = g.rotation_matrix();
    let inv = g.scales.map(|s| 1.0 / (s * s));
    let m = rot * Mat3::from_diagonal(&inv) * rot.transpose();
    let q = u.dot(&(m * u));
    let radius = 1.0 / q.sqrt();
    let r3 = radius * radius * radius;

    // r = q^{-1/2}, dq/du = 2 M u
    let d_u = -r3 * (m * u);
    let d_dir = (d_u - u * u.dot(&d_u)) / n;

    // q = uᵀ R D Rᵀ u
    let local = rot.transpose() * u;
    let d_rot = (u * local.component_mul(&inv).transpose()) * (-r3);
    let d_scales = Vec3::from_fn(|k, _| {
        let s = g.scales[k];
        r3 * local[k] * local[k] / (s * s * s)
    });
    Ok(RadiusGrad {
        radius,
        d_dir,
        d_rot,
        d_scales,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn prim(rot: UnitQuaternion<f64>, scales: Vec3) -> GaussianPrimitive {
        GaussianPrimitive::new(Vec3::zeros(), rot, scales, 0.5, Vec3::repeat(0.5)).unwrap()
    }

    fn random_prim(rng: &mut ChaCha8Rng) -> GaussianPrimitive {
        let axis = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let rot = UnitQuaternion::from_scaled_axis(axis * 2.0);
        let scales = Vec3::new(rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0));
        let mu = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        GaussianPrimitive::new(mu, rot, scales, 0.5, Vec3::repeat(0.5)).unwrap()
    }

    /// Bisection on the implicit value along the ray; independent of the closed form.
    fn ray_march_radius(g: &GaussianPrimitive, v: &Vec3) -> f64 {
        let u = v.normalize();
        let m = ellipsoid_matrix(g);
        let mut hi = 1e-3;
        while m.quadratic(&(u * hi)) < 1.0 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if m.quadratic(&(u * mid)) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn covariance_examples() {
        let id = UnitQuaternion::identity();
        assert!((covariance(&prim(id, Vec3::repeat(1.0))) - Mat3::identity()).norm() < 1e-15);
        let d = covariance(&prim(id, Vec3::new(2.0, 1.0, 1.0)));
        assert!((d - Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0))).norm() < 1e-15);

        let rz = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), FRAC_PI_2);
        let g = prim(rz, Vec3::new(2.0, 1.0, 1.0));
        // oracle: explicit R S Sᵀ Rᵀ with the textbook rotation matrix
        let r = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let s = Mat3::from_diagonal(&Vec3::new(2.0, 1.0, 1.0));
        let expected = r * s * s.transpose() * r.transpose();
        assert!((covariance(&g) - expected).norm() < 1e-12);
        assert!((expected - Mat3::from_diagonal(&Vec3::new(1.0, 4.0, 1.0))).norm() < 1e-12);
    }

    #[test]
    fn ellipsoid_matrix_is_inverse_covariance() {
        let id = UnitQuaternion::identity();
        assert!((ellipsoid_matrix(&prim(id, Vec3::repeat(1.0))).m - Mat3::identity()).norm() < 1e-15);
        let m = ellipsoid_matrix(&prim(id, Vec3::new(2.0, 1.0, 1.0))).m;
        assert!((m - Mat3::from_diagonal(&Vec3::new(0.25, 1.0, 1.0))).norm() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let g = random_prim(&mut rng);
            let m = ellipsoid_matrix(&g).m;
            let inv = covariance(&g).try_inverse().unwrap();
            assert!((m - inv).norm() / inv.norm() < 1e-10);
            assert!((m - m.transpose()).amax() < 1e-12);
            assert!(m.cholesky().is_some());
        }
    }

    #[test]
    fn directional_radius_examples() {
        let id = UnitQuaternion::identity();
        let sphere = prim(id, Vec3::repeat(1.0));
        let r = directional_radius(&sphere, &Vec3::new(0.3, -0.9, 0.1)).unwrap();
        assert!((r - 1.0).abs() < 1e-14);
        let e = prim(id, Vec3::new(2.0, 1.0, 1.0));
        assert!((directional_radius(&e, &Vec3::x()).unwrap() - 2.0).abs() < 1e-14);
        let diag = Vec3::new(1.0, 1.0, 0.0);
        let oracle = ray_march_radius(&e, &diag);
        assert!((oracle - 1.26491).abs() < 1e-5);
        assert!((directional_radius(&e, &diag).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn degenerate_direction_rejected() {
        let g = prim(UnitQuaternion::identity(), Vec3::repeat(1.0));
        assert!(matches!(
            directional_radius(&g, &Vec3::new(1e-13, 0.0, 0.0)),
            Err(Error::DegenerateDirection(_))
        ));
    }

    #[test]
    fn pair_gap_examples() {
        let id = UnitQuaternion::identity();
        let mut a = prim(id, Vec3::repeat(1.0));
        let mut b = prim(id, Vec3::repeat(1.0));
        b.mu = Vec3::new(2.0, 0.0, 0.0);
        assert!(pair_gap(&a, &b).unwrap().abs() < 1e-14);
        b.mu = Vec3::new(3.0, 0.0, 0.0);
        assert!((pair_gap(&a, &b).unwrap() - 1.0).abs() < 1e-14);

        let rz = UnitQuaternion::from_axis_angle(&Vec3::z_axis(), FRAC_PI_2);
        let mut e = prim(rz, Vec3::new(2.0, 1.0, 1.0));
        e.mu = Vec3::new(3.0, 0.0, 0.0);
        let oracle = 3.0 - ray_march_radius(&a, &Vec3::x()) - ray_march_radius(&e, &Vec3::x());
        assert!((oracle - 1.0).abs() < 1e-9);
        assert!((pair_gap(&a, &e).unwrap() - oracle).abs() < 1e-9);

        a.mu = b.mu;
        assert!(matches!(pair_gap(&a, &b), Err(Error::CoincidentCenters(_))));
    }

    #[test]
    fn radius_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let g = random_prim(&mut rng);
            let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if v.norm() < 1e-3 {
                continue;
            }
            let r = directional_radius(&g, &v).unwrap();
            let oracle = ray_march_radius(&g, &v);
            assert!((r - oracle).abs() / oracle < 1e-6);

            let x = v.normalize() * r;
            assert!((ellipsoid_matrix(&g).quadratic(&x) - 1.0).abs() < 1e-9);

            let q = UnitQuaternion::from_scaled_axis(Vec3::new(0.3, -1.1, 0.7));
            let mut rotated = g.clone();
            rotated.rotation = q.into_inner() * g.rotation;
            let rr = directional_radius(&rotated, &(q * v)).unwrap();
            assert!((rr - r).abs() < 1e-10);

            let mut scaled = g.clone();
            scaled.scales *= 2.5;
            let rs = directional_radius(&scaled, &v).unwrap();
            assert!((rs - 2.5 * r).abs() < 1e-12 * rs.max(1.0));
        }
    }

    #[test]
    fn pair_gap_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = random_prim(&mut rng);
            let b = random_prim(&mut rng);
            assert!((pair_gap(&a, &b).unwrap() - pair_gap(&b, &a).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn radius_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..50 {
            let g = random_prim(&mut rng);
            let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.5);
            let grad = directional_radius_grad(&g, &v).unwrap();
            for k in 0..3 {
                let mut vp = v;
                vp[k] += h;
                let mut vm = v;
                vm[k] -= h;
                let fd = (directional_radius(&g, &vp).unwrap() - directional_radius(&g, &vm).unwrap()) / (2.0 * h);
                assert!((fd - grad.d_dir[k]).abs() < 1e-6 * (1.0 + fd.abs()));

                let mut gp = g.clone();
                gp.scales[k] += h;
                let mut gm = g.clone();
                gm.scales[k] -= h;
                let fd = (directional_radius(&gp, &v).unwrap() - directional_radius(&gm, &v).unwrap()) / (2.0 * h);
                assert!((fd - grad.d_scales[k]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
            let dq = quat_backward(&g.rotation, &grad.d_rot);
            for k in 0..4 {
                let mut gp = g.clone();
                let mut gm = g.clone();
                gp.rotation.coords[(k + 3) % 4] += h;
                gm.rotation.coords[(k + 3) % 4] -= h;
                let fd = (directional_radius(&gp, &v).unwrap() - directional_radius(&gm, &v).unwrap()) / (2.0 * h);
                assert!((fd - dq[k]).abs() < 1e-6 * (1.0 + fd.abs()), "q[{k}] fd {fd} an {}", dq[k]);
            }
        }
    }
}
