//! Touch exploration: where to probe, what a probe returns, and how the
//! model absorbs it.

mod mc_table;
mod patch;
mod proxy;
mod sampling;

pub use patch::{prune_contradicted, prune_mask, spawn_touch_gaussians, TouchPatch, DISC_FLATNESS, TOUCH_OPACITY};
pub use proxy::{
    build_proxy_mesh, density_grid, extract_boundary, extract_boundary_with, greedy_cover, marching_cubes, BoundarySet,
    DensityGrid, ISO_FRACTION, NORMAL_DEVIATION_DEG,
};
pub use sampling::{
    acquire_patch, median, nn_gap, nn_gap_points, select_sparse_centers, select_sparse_indices, SurfaceIndex,
};
