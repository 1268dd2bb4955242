//! Point-set reconstruction metrics.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GaussianPrimitive, Vec3};
use crate::spatial::KdTree;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub cd_mm: f64,
    pub fscore_pct: f64,
    pub jsd: f64,
}

impl MetricsRecord {
    pub fn is_valid(&self) -> bool {
        self.cd_mm >= 0.0 && (0.0..=100.0).contains(&self.fscore_pct) && (0.0..=1.0).contains(&self.jsd)
    }
}

/// Distance from each point of `from` to its nearest point in `to`.
fn nearest_distances(from: &[Vec3], to: &KdTree) -> Vec<f64> {
    from.iter().map(|p| to.nearest(p).map_or(f64::INFINITY, |n| n.dist())).collect()
}

fn check(a: &[Vec3], b: &[Vec3]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Symmetric mean nearest-neighbor distance, in millimeters for inputs in meters.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    check(a, b)?;
    let ta = KdTree::new(a.to_vec());
    let tb = KdTree::new(b.to_vec());
    let ab = mean(&nearest_distances(a, &tb));
    let ba = mean(&nearest_distances(b, &ta));
    Ok(0.5 * (ab + ba) * 1000.0)
}

/// Harmonic mean of precision and recall at threshold `tau`, in percent.
pub fn fscore(a: &[Vec3], b: &[Vec3], tau: f64) -> Result<f64> {
    check(a, b)?;
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("F-score threshold must be positive, got {tau}")));
    }
    let ta = KdTree::new(a.to_vec());
    let tb = KdTree::new(b.to_vec());
    let frac = |d: Vec<f64>| d.iter().filter(|&&x| x <= tau).count() as f64 / d.len() as f64;
    let precision = frac(nearest_distances(a, &tb));
    let recall = frac(nearest_distances(b, &ta));
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(200.0 * (precision * recall) / (precision + recall))
}

fn occupancy(points: &[Vec3], lo: &Vec3, hi: &Vec3, grid: usize) -> Vec<f64> {
    let mut hist = vec![0.0; grid * grid * grid];
    for p in points {
        let cell = [0, 1, 2].map(|a| {
            let extent = hi[a] - lo[a];
            if extent <= 0.0 {
                0
            } else {
                (((p[a] - lo[a]) / extent * grid as f64).floor() as usize).min(grid - 1)
            }
        });
        hist[(cell[2] * grid + cell[1]) * grid + cell[0]] += 1.0;
    }
    let n = points.len() as f64;
    hist.iter_mut().for_each(|h| *h /= n);
    hist
}

/// Base-2 Jensen–Shannon divergence of voxel occupancy over the joint bounds.
pub fn jsd(a: &[Vec3], b: &[Vec3], grid: usize) -> Result<f64> {
    check(a, b)?;
    if grid < 2 {
        return Err(Error::InvalidConfig(format!("JSD grid must be at least 2, got {grid}")));
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in a.iter().chain(b) {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let p = occupancy(a, &lo, &hi, grid);
    let q = occupancy(b, &lo, &hi, grid);
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(&q) {
        let m = 0.5 * (pi + qi);
        if pi > 0.0 {
            total += 0.5 * pi * (pi / m).log2();
        }
        if qi > 0.0 {
            total += 0.5 * qi * (qi / m).log2();
        }
    }
    Ok(total.clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// F-score threshold in meters; `None` uses 1% of the ground-truth bounding-box diagonal.
    pub fscore_tau: Option<f64>,
    pub jsd_grid: usize,
    /// Evaluate points on each ellipsoid surface instead of the centers.
    pub sample_ellipsoids: bool,
    /// Surface samples for a fully opaque primitive.
    pub samples_per_primitive: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { fscore_tau: None, jsd_grid: 32, sample_ellipsoids: false, samples_per_primitive: 8 }
    }
}

/// Points on the 1σ ellipsoid of each primitive, count proportional to opacity.
pub fn ellipsoid_samples(gaussians: &[GaussianPrimitive], per_primitive: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for g in gaussians {
        let n = (g.opacity * per_primitive as f64).round().max(1.0) as usize;
        let r = g.rotation_matrix();
        for _ in 0..n {
            let u = loop {
                let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let n2 = v.norm_squared();
                if n2 > 1e-6 && n2 <= 1.0 {
                    break v / n2.sqrt();
                }
            };
            out.push(g.mu + r * u.component_mul(&g.scales));
        }
    }
    out
}

/// All three metrics of a model against ground-truth samples.
pub fn evaluate(
    gaussians: &[GaussianPrimitive],
    ground_truth: &[Vec3],
    config: &MetricsConfig,
    iteration: usize,
) -> Result<MetricsRecord> {
    let points = if config.sample_ellipsoids {
        ellipsoid_samples(gaussians, config.samples_per_primitive, iteration as u64)
    } else {
        gaussians.iter().map(|g| g.mu).collect()
    };
    let tau = match config.fscore_tau {
        Some(t) => t,
        None => default_tau(ground_truth)?,
    };
    Ok(MetricsRecord {
        iteration,
        cd_mm: chamfer(&points, ground_truth)?,
        fscore_pct: fscore(&points, ground_truth, tau)?,
        jsd: jsd(&points, ground_truth, config.jsd_grid)?,
    })
}

/// 1% of the bounding-box diagonal of `points`.
pub fn default_tau(points: &[Vec3]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    Ok(0.01 * (hi - lo).norm())
}

pub const CSV_HEADER: &str = "iteration,cd_mm,fscore_pct,jsd";

pub fn write_csv<W: Write>(w: &mut W, records: &[MetricsRecord]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{},{:.6},{:.6},{:.8}", r.iteration, r.cd_mm, r.fscore_pct, r.jsd)?;
    }
    Ok(())
}

pub fn save_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_csv(&mut f, records)?;
    f.flush()?;
    Ok(())
}
