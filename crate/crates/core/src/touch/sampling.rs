use crate::error::{Error, Result};
use crate::geometry::{GaussianPrimitive, Vec3};
use crate::spatial::KdTree;

use super::TouchPatch;

/// Distance from each center to its nearest other center.
pub fn nn_gap(gaussians: &[GaussianPrimitive]) -> Result<Vec<f64>> {
    nn_gap_points(&gaussians.iter().map(|g| g.mu).collect::<Vec<_>>())
}

pub fn nn_gap_points(points: &[Vec3]) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(Error::TooFewPrimitives { needed: 2, have: points.len() });
    }
    let tree = KdTree::new(points.to_vec());
    Ok((0..points.len()).map(|i| tree.nearest_other(i).map_or(0.0, |n| n.dist())).collect())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Indices of the `count` sparsest primitives, sparsest first.
///
/// Candidates are visited by descending gap; a candidate closer than twice the
/// median gap to an already chosen one is skipped. Slots still empty after
/// that pass are filled with the skipped candidates in the same order.
pub fn select_sparse_indices(gaps: &[f64], centers: &[Vec3], count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > gaps.len() {
        return Err(Error::InsufficientPrimitives { requested: count, available: gaps.len() });
    }
    let mut order: Vec<usize> = (0..gaps.len()).collect();
    order.sort_by(|&a, &b| gaps[b].total_cmp(&gaps[a]).then(a.cmp(&b)));
    let separation = 2.0 * median(gaps);
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    for &i in &order {
        if chosen.len() == count {
            break;
        }
        if chosen.iter().all(|&j| (centers[i] - centers[j]).norm() > separation) {
            chosen.push(i);
        }
    }
    for &i in &order {
        if chosen.len() == count {
            break;
        }
        if !chosen.contains(&i) {
            chosen.push(i);
        }
    }
    Ok(chosen)
}

pub fn select_sparse_centers(gaussians: &[GaussianPrimitive], count: usize) -> Result<Vec<Vec3>> {
    if count == 0 || count > gaussians.len() {
        return Err(Error::InsufficientPrimitives { requested: count, available: gaussians.len() });
    }
    let centers: Vec<Vec3> = gaussians.iter().map(|g| g.mu).collect();
    let gaps = if centers.len() == 1 { vec![0.0] } else { nn_gap_points(&centers)? };
    Ok(select_sparse_indices(&gaps, &centers, count)?.into_iter().map(|i| centers[i]).collect())
}

/// Dense ground-truth samples with normals, indexed for k-NN retrieval.
#[derive(Clone, Debug)]
pub struct SurfaceIndex {
    tree: KdTree,
    normals: Vec<Vec3>,
}

impl SurfaceIndex {
    pub fn new(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::DimensionMismatch((points.len(), 3), (normals.len(), 3)));
        }
        Ok(Self { tree: KdTree::new(points), normals })
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        self.tree.points()
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn tree(&self) -> &KdTree {
        &self.tree
    }
}

/// The `k` ground-truth samples nearest to `center`.
pub fn acquire_patch(ground_truth: &SurfaceIndex, center: &Vec3, k: usize) -> Result<TouchPatch> {
    if k == 0 || ground_truth.len() < k {
        return Err(Error::InsufficientGroundTruth { needed: k.max(1), have: ground_truth.len() });
    }
    let hits = ground_truth.tree.knn(center, k);
    Ok(TouchPatch {
        center: *center,
        points: hits.iter().map(|n| ground_truth.points()[n.index]).collect(),
        normals: hits.iter().map(|n| ground_truth.normals[n.index]).collect(),
    })
}
