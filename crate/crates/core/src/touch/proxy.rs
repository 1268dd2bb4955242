use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{ellipsoid_matrix, GaussianPrimitive, Vec3};
use crate::mesh::TriangleMesh;
use crate::spatial::KdTree;

use super::mc_table::TRIANGLE_TABLE;

/// Dihedral deviation above which a shared edge counts as a boundary.
pub const NORMAL_DEVIATION_DEG: f64 = 60.0;
/// Iso-level as a fraction of the largest sampled density.
pub const ISO_FRACTION: f64 = 0.5;

const CORNERS: [[usize; 3]; 8] = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]];
const EDGES: [[usize; 2]; 12] = [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4], [0, 4], [1, 5], [2, 6], [3, 7]];

/// Scalar field sampled on a regular lattice.
#[derive(Clone, Debug)]
pub struct DensityGrid {
    pub origin: Vec3,
    pub spacing: f64,
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl DensityGrid {
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.spacing
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Samples `Σ opacity·exp(−½ dᵀΣ⁻¹d)` with `resolution` cells along the
/// longest axis of the padded model bounds.
pub fn density_grid(gaussians: &[GaussianPrimitive], resolution: usize) -> Result<DensityGrid> {
    if gaussians.is_empty() {
        return Err(Error::EmptyModel);
    }
    let resolution = resolution.max(2);
    let reach: Vec<f64> = gaussians.iter().map(|g| 3.0 * g.scales.max()).collect();
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for (g, r) in gaussians.iter().zip(&reach) {
        lo = lo.inf(&(g.mu - Vec3::repeat(*r)));
        hi = hi.sup(&(g.mu + Vec3::repeat(*r)));
    }
    let extent = (hi - lo).max();
    let spacing = extent / resolution as f64;
    // one empty layer on every side keeps the isosurface off the grid walls
    let origin = lo - Vec3::repeat(spacing);
    let dims = [0, 1, 2].map(|a| (((hi[a] - lo[a]) / spacing).ceil() as usize) + 3);
    let mut grid = DensityGrid { origin, spacing, dims, values: vec![0.0; dims[0] * dims[1] * dims[2]] };
    for (g, r) in gaussians.iter().zip(&reach) {
        let m = ellipsoid_matrix(g);
        let first = [0, 1, 2].map(|a| (((g.mu[a] - r - origin[a]) / spacing).floor().max(0.0)) as usize);
        let last = [0, 1, 2].map(|a| ((((g.mu[a] + r - origin[a]) / spacing).ceil()) as usize).min(dims[a] - 1));
        for k in first[2]..=last[2] {
            for j in first[1]..=last[1] {
                for i in first[0]..=last[0] {
                    let d = grid.position(i, j, k) - g.mu;
                    let q = m.quadratic(&d);
                    if q <= 9.0 {
                        let idx = grid.index(i, j, k);
                        grid.values[idx] += g.opacity * (-0.5 * q).exp();
                    }
                }
            }
        }
    }
    Ok(grid)
}

/// Marching-cubes triangulation of `grid` at `iso`.
pub fn marching_cubes(grid: &DensityGrid, iso: f64) -> TriangleMesh {
    let [nx, ny, nz] = grid.dims;
    let mut vertices = Vec::new();
    let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
    let mut triangles = Vec::new();
    for k in 0..nz.saturating_sub(1) {
        for j in 0..ny.saturating_sub(1) {
            for i in 0..nx.saturating_sub(1) {
                let node = CORNERS.map(|c| grid.index(i + c[0], j + c[1], k + c[2]));
                let mut case = 0usize;
                for (b, &n) in node.iter().enumerate() {
                    if grid.values[n] < iso {
                        case |= 1 << b;
                    }
                }
                let row = &TRIANGLE_TABLE[case];
                if row[0] < 0 {
                    continue;
                }
                let mut edge_vertex = |e: usize| -> usize {
                    let [a, b] = EDGES[e];
                    let (na, nb) = (node[a], node[b]);
                    *lookup.entry((na.min(nb), na.max(nb))).or_insert_with(|| {
                        let (va, vb) = (grid.values[na], grid.values[nb]);
                        let pa = grid.position(i + CORNERS[a][0], j + CORNERS[a][1], k + CORNERS[a][2]);
                        let pb = grid.position(i + CORNERS[b][0], j + CORNERS[b][1], k + CORNERS[b][2]);
                        let t = if (vb - va).abs() > f64::MIN_POSITIVE { ((iso - va) / (vb - va)).clamp(0.0, 1.0) } else { 0.5 };
                        vertices.push(pa + (pb - pa) * t);
                        vertices.len() - 1
                    })
                };
                for tri in row.chunks(3).take_while(|t| t[0] >= 0) {
                    triangles.push([edge_vertex(tri[0] as usize), edge_vertex(tri[1] as usize), edge_vertex(tri[2] as usize)]);
                }
            }
        }
    }
    TriangleMesh::new_filtered(vertices, triangles)
}

/// Isosurface of the model's density at half its sampled maximum.
pub fn build_proxy_mesh(gaussians: &[GaussianPrimitive], grid_resolution: usize) -> Result<TriangleMesh> {
    let grid = density_grid(gaussians, grid_resolution)?;
    Ok(marching_cubes(&grid, ISO_FRACTION * grid.max()))
}

/// Candidate hole locations on a proxy mesh.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundarySet {
    pub points: Vec<Vec3>,
    pub covered: Vec<bool>,
}

impl BoundarySet {
    pub fn new(points: Vec<Vec3>) -> Self {
        let covered = vec![false; points.len()];
        Self { points, covered }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Marks every point within `radius` of any of `sites`.
    pub fn cover_near(&mut self, sites: &[Vec3], radius: f64) {
        if sites.is_empty() {
            return;
        }
        let tree = KdTree::new(sites.to_vec());
        for (p, c) in self.points.iter().zip(self.covered.iter_mut()) {
            if tree.nearest(p).is_some_and(|n| n.dist() <= radius) {
                *c = true;
            }
        }
    }
}

/// Midpoints of open edges plus vertices of edges whose incident faces
/// deviate by more than [`NORMAL_DEVIATION_DEG`].
pub fn extract_boundary(mesh: &TriangleMesh) -> BoundarySet {
    extract_boundary_with(mesh, NORMAL_DEVIATION_DEG)
}

pub fn extract_boundary_with(mesh: &TriangleMesh, deviation_deg: f64) -> BoundarySet {
    let cos_limit = deviation_deg.to_radians().cos();
    let mut points = Vec::new();
    let mut flagged = vec![false; mesh.vertices.len()];
    for ((a, b), faces) in mesh.edge_faces() {
        if faces.len() == 1 {
            points.push((mesh.vertices[a] + mesh.vertices[b]) * 0.5);
            continue;
        }
        let inconsistent = faces
            .iter()
            .enumerate()
            .any(|(x, &f)| faces[x + 1..].iter().any(|&g| mesh.normals[f].dot(&mesh.normals[g]) < cos_limit));
        if inconsistent {
            flagged[a] = true;
            flagged[b] = true;
        }
    }
    points.extend(flagged.iter().enumerate().filter(|(_, &f)| f).map(|(v, _)| mesh.vertices[v]));
    BoundarySet::new(points)
}

/// Greedy radius cover of the uncovered boundary points.
///
/// Each round picks the point whose ball covers the most uncovered points
/// (lowest index on ties) and stops after `budget` rounds or full coverage.
pub fn greedy_cover(boundary: &mut BoundarySet, radius: f64, budget: usize) -> Result<Vec<Vec3>> {
    if boundary.is_empty() {
        return Err(Error::EmptyBoundary);
    }
    if budget == 0 || !(radius > 0.0) {
        return Err(Error::InvalidConfig(format!("greedy cover needs budget ≥ 1 and radius > 0, got {budget}, {radius}")));
    }
    let tree = KdTree::new(boundary.points.clone());
    let balls: Vec<Vec<usize>> = boundary.points.iter().map(|p| tree.within(p, radius)).collect();
    let mut centers = Vec::new();
    for _ in 0..budget {
        let mut best = (0usize, 0usize);
        for (i, ball) in balls.iter().enumerate() {
            let gain = ball.iter().filter(|&&j| !boundary.covered[j]).count();
            if gain > best.1 {
                best = (i, gain);
            }
        }
        if best.1 == 0 {
            break;
        }
        for &j in &balls[best.0] {
            boundary.covered[j] = true;
        }
        centers.push(boundary.points[best.0]);
    }
    Ok(centers)
}
