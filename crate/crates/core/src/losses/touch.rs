//! Geometric consistency loss over neighboring primitives.

use crate::error::{Error, Result};
use crate::geometry::{directional_radius_grad, pair_gap, quat_backward, GaussianPrimitive, EPS};
use crate::render::GaussianGrad;
use crate::spatial::KdTree;

#[derive(Clone, Debug)]
pub struct TouchLoss {
    pub value: f64,
    pub grads: Vec<GaussianGrad>,
}

/// Mean squared pair gap, `(1/|P|) Σ δᵢⱼ²`, with gradients through the
/// directional radii. Locked members receive no geometric gradient.
pub fn touch_loss(gaussians: &[GaussianPrimitive], pairs: &[(usize, usize)]) -> Result<TouchLoss> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairSet);
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut grads = vec![GaussianGrad::default(); gaussians.len()];
    let mut value = 0.0;
    for &(i, j) in pairs {
        let (gi, gj) = (&gaussians[i], &gaussians[j]);
        let v = gi.mu - gj.mu;
        let d = v.norm();
        if d <= EPS {
            return Err(Error::CoincidentCenters(d));
        }
        let ri = directional_radius_grad(gi, &v)?;
        let rj = directional_radius_grad(gj, &v)?;
        let delta = d - ri.radius - rj.radius;
        value += delta * delta * scale;

        let w = 2.0 * delta * scale;
        let d_v = (v / d - ri.d_dir - rj.d_dir) * w;
        if !gi.locked {
            let g = &mut grads[i];
            g.mu += d_v;
            g.scales -= ri.d_scales * w;
            g.rotation -= quat_backward(&gi.rotation, &ri.d_rot) * w;
        }
        if !gj.locked {
            let g = &mut grads[j];
            g.mu -= d_v;
            g.scales -= rj.d_scales * w;
            g.rotation -= quat_backward(&gj.rotation, &rj.d_rot) * w;
        }
    }
    Ok(TouchLoss { value, grads })
}

/// Pairs every region member with its `m` nearest region neighbors.
///
/// Pairs are returned as sorted `(lo, hi)` model indices without duplicates.
pub fn build_pair_set(gaussians: &[GaussianPrimitive], region: &[usize], m: usize) -> Result<Vec<(usize, usize)>> {
    if region.len() < 2 {
        return Err(Error::TooFewPrimitives { needed: 2, have: region.len() });
    }
    let tree = KdTree::new(region.iter().map(|&i| gaussians[i].mu).collect());
    let mut pairs = Vec::with_capacity(region.len() * m);
    for (local, &i) in region.iter().enumerate() {
        for n in tree.knn(&gaussians[i].mu, m + 1) {
            if n.index == local {
                continue;
            }
            let j = region[n.index];
            pairs.push((i.min(j), i.max(j)));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    // coincident centers have no defined gap
    pairs.retain(|&(a, b)| pair_gap(&gaussians[a], &gaussians[b]).is_ok());
    Ok(pairs)
}
