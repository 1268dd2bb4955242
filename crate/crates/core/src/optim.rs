//! Adaptive-moment optimizer over Gaussian parameters.
//!
//! Scales are updated in log space so they stay positive; everything else is
//! updated directly and clamped afterwards.

use nalgebra::Quaternion;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GaussianPrimitive;
use crate::render::GaussianGrad;

pub const OPACITY_MIN: f64 = 0.005;
pub const OPACITY_MAX: f64 = 0.99;
pub const SCALE_MIN: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    /// Multiplied by the scene extent.
    pub mu: f64,
    pub rotation: f64,
    pub scales: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { mu: 2e-3, rotation: 1e-3, scales: 5e-3, opacity: 5e-2, color: 2.5e-3 }
    }
}

impl LearningRates {
    pub fn validate(&self) -> Result<()> {
        if [self.mu, self.rotation, self.scales, self.opacity, self.color].iter().any(|&r| !(r > 0.0)) {
            return Err(Error::InvalidConfig(format!("learning rates must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

const GEOMETRY: usize = 10;
const APPEARANCE: usize = 4;

/// Moment buffers for one primitive. Locked primitives only carry the
/// appearance slots (opacity, color).
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u32,
}

impl Moments {
    pub fn for_primitive(g: &GaussianPrimitive) -> Self {
        let n = if g.locked { APPEARANCE } else { GEOMETRY + APPEARANCE };
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&self) -> u32 {
        self.step
    }
}

impl Adam {
    /// One update of `g` from its gradient; returns early on an all-zero gradient.
    pub fn update(&self, g: &mut GaussianPrimitive, grad: &GaussianGrad, state: &mut Moments, lr: &LearningRates, extent: f64) {
        if grad.is_zero() {
            return;
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut slot = 0;
        let mut adam = |grad: f64, rate: f64| -> f64 {
            let m = &mut state.m[slot];
            let v = &mut state.v[slot];
            *m = self.beta1 * *m + (1.0 - self.beta1) * grad;
            *v = self.beta2 * *v + (1.0 - self.beta2) * grad * grad;
            slot += 1;
            -rate * (*m / c1) / ((*v / c2).sqrt() + self.eps)
        };
        if !g.locked {
            for k in 0..3 {
                g.mu[k] += adam(grad.mu[k], lr.mu * extent);
            }
            // gradient is ordered (w, x, y, z); nalgebra stores (x, y, z, w)
            let mut q = [g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k];
            for (k, qk) in q.iter_mut().enumerate() {
                *qk += adam(grad.rotation[k], lr.rotation);
            }
            let q = Quaternion::new(q[0], q[1], q[2], q[3]);
            let n = q.norm();
            if n > 1e-12 {
                g.rotation = q / n;
            }
            for k in 0..3 {
                let log_s = g.scales[k].ln() + adam(grad.scales[k] * g.scales[k], lr.scales);
                g.scales[k] = log_s.exp().max(SCALE_MIN);
            }
        }
        g.opacity = (g.opacity + adam(grad.opacity, lr.opacity)).clamp(OPACITY_MIN, OPACITY_MAX);
        for k in 0..3 {
            g.color[k] = (g.color[k] + adam(grad.color[k], lr.color)).clamp(0.0, 1.0);
        }
    }
}
