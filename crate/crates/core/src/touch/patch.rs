use nalgebra::UnitQuaternion;

use crate::geometry::{GaussianPrimitive, Origin, Vec3};
use crate::spatial::KdTree;

use super::sampling::median;

pub const TOUCH_OPACITY: f64 = 0.9;
/// Normal-axis scale relative to the tangent scales of a spawned disc.
pub const DISC_FLATNESS: f64 = 0.25;

/// Contact points and surface normals from one probe.
#[derive(Clone, Debug, PartialEq)]
pub struct TouchPatch {
    pub center: Vec3,
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl TouchPatch {
    pub fn k(&self) -> usize {
        self.points.len()
    }

    /// Largest distance from the center to a contact point.
    pub fn bounding_radius(&self) -> f64 {
        self.points.iter().map(|p| (p - self.center).norm()).fold(0.0, f64::max)
    }

    /// Median distance between contact points and their nearest neighbor.
    pub fn spacing(&self) -> f64 {
        if self.points.len() < 2 {
            return 0.0;
        }
        let tree = KdTree::new(self.points.clone());
        let gaps: Vec<f64> = (0..self.points.len()).filter_map(|i| tree.nearest_other(i)).map(|n| n.dist()).collect();
        median(&gaps)
    }
}

fn align_z(n: &Vec3) -> UnitQuaternion<f64> {
    UnitQuaternion::rotation_between(&Vec3::z(), n)
        .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI))
}

/// One locked disc per contact point, tangent to the measured surface.
///
/// Color comes from the nearest visual primitive, or `background` if there is none.
pub fn spawn_touch_gaussians(patch: &TouchPatch, model: &[GaussianPrimitive], background: &Vec3) -> Vec<GaussianPrimitive> {
    let visual: Vec<&GaussianPrimitive> = model.iter().filter(|g| g.origin == Origin::Visual).collect();
    let tree = KdTree::new(visual.iter().map(|g| g.mu).collect());
    // coincident contacts would give a zero spacing
    let s = patch.spacing().max(1e-6);
    patch
        .points
        .iter()
        .zip(&patch.normals)
        .map(|(p, n)| {
            let color = tree.nearest(p).map_or(*background, |nb| visual[nb.index].color);
            GaussianPrimitive::touch(*p, align_z(n), Vec3::new(s, s, s * DISC_FLATNESS), TOUCH_OPACITY, color)
                .expect("spawned primitive is valid")
        })
        .collect()
}

/// `true` for visual primitives near the patch center that no contact point supports.
pub fn prune_mask(gaussians: &[GaussianPrimitive], patch: &TouchPatch, distance_threshold: f64) -> Vec<bool> {
    let tree = KdTree::new(patch.points.clone());
    let support = 0.5 * distance_threshold;
    gaussians
        .iter()
        .map(|g| {
            g.origin == Origin::Visual
                && (g.mu - patch.center).norm() <= distance_threshold
                && tree.nearest(&g.mu).is_none_or(|n| n.dist() > support)
        })
        .collect()
}

/// Removes contradicted visual primitives; returns how many were removed.
pub fn prune_contradicted(gaussians: &mut Vec<GaussianPrimitive>, patch: &TouchPatch, distance_threshold: f64) -> usize {
    let mask = prune_mask(gaussians, patch, distance_threshold);
    let mut it = mask.iter();
    gaussians.retain(|_| !*it.next().unwrap());
    mask.iter().filter(|&&m| m).count()
}
