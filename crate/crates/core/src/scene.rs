//! Synthetic capture rig: builtin objects, ground-truth sampling, ray-cast
//! sensors and the degraded capture conditions.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, DepthImage, Intrinsics, Pose, RgbImage};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::mesh::{box_mesh, lathe, sample_area_weighted, TriangleMesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Cube,
    Can,
    Hydrant,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 3] = [ObjectKind::Cube, ObjectKind::Can, ObjectKind::Hydrant];
}

impl FromStr for ObjectKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cube" => Ok(Self::Cube),
            "can" => Ok(Self::Can),
            "hydrant" => Ok(Self::Hydrant),
            _ => Err(Error::InvalidConfig(format!("unknown scene `{s}`"))),
        }
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cube => "cube",
            Self::Can => "can",
            Self::Hydrant => "hydrant",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "none")]
    Clean,
    #[serde(rename = "light")]
    DeterioratedLight,
    #[serde(rename = "views")]
    MissingViews,
    #[serde(rename = "occlusion")]
    Occlusion,
}

impl Condition {
    pub const DEGRADED: [Condition; 3] = [Condition::DeterioratedLight, Condition::MissingViews, Condition::Occlusion];
}

impl FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "clean" => Ok(Self::Clean),
            "light" => Ok(Self::DeterioratedLight),
            "views" => Ok(Self::MissingViews),
            "occlusion" => Ok(Self::Occlusion),
            _ => Err(Error::UnknownCondition(s.to_string())),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Clean => "none",
            Self::DeterioratedLight => "light",
            Self::MissingViews => "views",
            Self::Occlusion => "occlusion",
        })
    }
}

/// Object geometry with a per-face albedo.
#[derive(Clone, Debug)]
pub struct SceneObject {
    pub mesh: TriangleMesh,
    pub albedo: Vec<Vec3>,
}

const CUBE_EDGE: f64 = 1.0;
const CAN_RADIUS: f64 = 0.35;
const CAN_HEIGHT: f64 = 1.0;
const CAN_RIDGE: f64 = 0.03;
const HYDRANT_RADIUS: f64 = 0.3;
const HYDRANT_BOTTOM: f64 = -0.5;
const HYDRANT_SHOULDER: f64 = 0.2;
const BOLT_HEIGHT: f64 = -0.15;
const BOLT_FOOTPRINT: f64 = 0.07;
const BOLT_RISE: f64 = 0.045;

pub fn builtin_object(kind: ObjectKind) -> TriangleMesh {
    builtin_scene_object(kind).mesh
}

pub fn builtin_scene_object(kind: ObjectKind) -> SceneObject {
    match kind {
        ObjectKind::Cube => cube_object(),
        ObjectKind::Can => can_object(),
        ObjectKind::Hydrant => hydrant_object(),
    }
}

fn cube_object() -> SceneObject {
    let n = 4;
    let mesh = box_mesh(Vec3::repeat(CUBE_EDGE), n);
    let palette = [
        Vec3::new(0.85, 0.3, 0.25),
        Vec3::new(0.3, 0.7, 0.35),
        Vec3::new(0.3, 0.4, 0.85),
        Vec3::new(0.85, 0.8, 0.3),
        Vec3::new(0.75, 0.35, 0.8),
        Vec3::new(0.3, 0.8, 0.8),
    ];
    let albedo = (0..mesh.triangles.len())
        .map(|f| {
            let face = f / (2 * n * n);
            let cell = (f % (2 * n * n)) / 2;
            let (i, j) = (cell / n, cell % n);
            let base = palette[face];
            if (i + j) % 2 == 0 {
                base
            } else {
                base * 0.55
            }
        })
        .collect();
    SceneObject { mesh, albedo }
}

fn can_object() -> SceneObject {
    let half = 0.5 * CAN_HEIGHT;
    let ridge_z = [-0.3, -0.1, 0.1, 0.3];
    let ridge_width = 0.04;
    let rows = 100;
    let mut profile = vec![(0.0, -half)];
    for r in 0..=rows {
        let z = -half + CAN_HEIGHT * r as f64 / rows as f64;
        let bump: f64 = ridge_z
            .iter()
            .map(|&zc| {
                let t = (z - zc) / ridge_width;
                if t.abs() < 1.0 {
                    0.5 * (1.0 + (PI * t).cos())
                } else {
                    0.0
                }
            })
            .sum();
        profile.push((CAN_RADIUS + CAN_RIDGE * bump, z));
    }
    profile.push((0.0, half));
    let mesh = lathe(&profile, 72);
    let albedo = (0..mesh.triangles.len())
        .map(|f| {
            let [a, b, c] = mesh.triangle(f);
            let z = (a.z + b.z + c.z) / 3.0;
            let n = mesh.normals[f];
            if n.z.abs() > 0.9 {
                Vec3::new(0.75, 0.75, 0.78)
            } else if z.abs() < 0.2 {
                Vec3::new(0.85, 0.2, 0.2)
            } else {
                Vec3::new(0.6, 0.65, 0.75)
            }
        })
        .collect();
    SceneObject { mesh, albedo }
}

/// Bolt centers as (azimuth, height) on the body.
fn bolt_sites() -> Vec<(f64, f64)> {
    (0..6).map(|k| (k as f64 * PI / 3.0, BOLT_HEIGHT)).collect()
}

/// Outward rise of the spherical bolt caps at body location `(theta, z)`.
fn bolt_rise(theta: f64, z: f64) -> f64 {
    // sphere through the footprint rim with apex BOLT_RISE above the body
    let rho = (BOLT_FOOTPRINT * BOLT_FOOTPRINT + BOLT_RISE * BOLT_RISE) / (2.0 * BOLT_RISE);
    bolt_sites()
        .iter()
        .map(|&(t0, z0)| {
            let mut dt = (theta - t0).rem_euclid(2.0 * PI);
            if dt > PI {
                dt -= 2.0 * PI;
            }
            let d2 = (dt * HYDRANT_RADIUS).powi(2) + (z - z0).powi(2);
            if d2 < BOLT_FOOTPRINT * BOLT_FOOTPRINT {
                (rho * rho - d2).sqrt() - (rho - BOLT_RISE)
            } else {
                0.0
            }
        })
        .sum()
}

fn hydrant_object() -> SceneObject {
    let segments = 120;
    let mut profile = vec![(0.0, HYDRANT_BOTTOM)];
    let rows = 70;
    for r in 0..=rows {
        profile.push((HYDRANT_RADIUS, HYDRANT_BOTTOM + (HYDRANT_SHOULDER - HYDRANT_BOTTOM) * r as f64 / rows as f64));
    }
    let cap_rows = 18;
    for r in 1..cap_rows {
        let phi = 0.5 * PI * r as f64 / cap_rows as f64;
        profile.push((HYDRANT_RADIUS * phi.cos(), HYDRANT_SHOULDER + HYDRANT_RADIUS * phi.sin()));
    }
    profile.push((0.0, HYDRANT_SHOULDER + HYDRANT_RADIUS));
    let mut mesh = lathe(&profile, segments);
    let mut raised = vec![false; mesh.vertices.len()];
    for (v, flag) in mesh.vertices.iter_mut().zip(raised.iter_mut()) {
        let r = v.xy().norm();
        if (r - HYDRANT_RADIUS).abs() > 1e-9 || v.z <= HYDRANT_BOTTOM || v.z >= HYDRANT_SHOULDER {
            continue;
        }
        let rise = bolt_rise(v.y.atan2(v.x), v.z);
        if rise > 0.0 {
            let radial = Vec3::new(v.x, v.y, 0.0) / r;
            *v += radial * rise;
            *flag = true;
        }
    }
    let mesh = TriangleMesh::new(mesh.vertices, mesh.triangles).expect("bolt displacement keeps faces valid");
    let albedo = mesh
        .triangles
        .iter()
        .enumerate()
        .map(|(f, t)| {
            if t.iter().any(|&v| raised[v]) {
                Vec3::new(0.9, 0.8, 0.25)
            } else if mesh.normals[f].z < -0.9 {
                Vec3::new(0.3, 0.3, 0.3)
            } else {
                let z = (mesh.vertices[t[0]].z + mesh.vertices[t[1]].z + mesh.vertices[t[2]].z) / 3.0;
                if z > HYDRANT_SHOULDER {
                    Vec3::new(0.85, 0.55, 0.2)
                } else {
                    Vec3::new(0.8, 0.15, 0.12)
                }
            }
        })
        .collect();
    SceneObject { mesh, albedo }
}

/// Faces lifted off the hydrant body by a bolt.
pub fn protrusion_faces(mesh: &TriangleMesh) -> Vec<usize> {
    (0..mesh.triangles.len())
        .filter(|&f| {
            mesh.triangles[f].iter().any(|&v| {
                let p = mesh.vertices[v];
                p.z > HYDRANT_BOTTOM && p.z < HYDRANT_SHOULDER && p.xy().norm() > HYDRANT_RADIUS + 1e-9
            })
        })
        .collect()
}

/// Dense oriented samples of the object surface.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub faces: Vec<usize>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }
}

pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> GroundTruth {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = sample_area_weighted(mesh, n, &mut rng);
    GroundTruth { points: s.points, normals: s.normals, faces: s.faces }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointLight {
    pub position: Vec3,
    pub intensity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_center(center: Vec3, half: Vec3) -> Self {
        Self { min: center - half, max: center + half }
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|a| self.min[a] <= other.max[a] && other.min[a] <= self.max[a])
    }

    /// Entry distance and outward normal of the first hit along the ray.
    pub fn ray_hit(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec3)> {
        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        let mut axis = 0;
        for a in 0..3 {
            let inv = 1.0 / dir[a];
            let (mut t0, mut t1) = ((self.min[a] - origin[a]) * inv, (self.max[a] - origin[a]) * inv);
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            if t0 > t_enter {
                t_enter = t0;
                axis = a;
            }
            t_exit = t_exit.min(t1);
        }
        if t_enter > t_exit || t_enter <= 0.0 {
            return None;
        }
        let mut n = Vec3::zeros();
        n[axis] = -dir[axis].signum();
        Some((t_enter, n))
    }
}

/// Color of occluder blocks.
pub const OCCLUDER_ALBEDO: [f64; 3] = [0.35, 0.25, 0.18];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigConfig {
    pub image_size: usize,
    pub fov_deg: f64,
    pub camera_distance: f64,
    pub depth_elevation_deg: f64,
    pub rgb_elevation_deg: f64,
    pub light_intensity: f64,
    pub light_distance: f64,
    /// Depth readings are rounded to multiples of this (meters).
    pub depth_quantum: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            fov_deg: 40.0,
            camera_distance: 3.2,
            depth_elevation_deg: 20.0,
            rgb_elevation_deg: 30.0,
            light_intensity: 3.0,
            light_distance: 3.0,
            depth_quantum: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SceneConfig {
    pub object: TriangleMesh,
    pub albedo: Vec<Vec3>,
    pub rgb_cameras: Vec<CameraModel>,
    pub depth_cameras: Vec<CameraModel>,
    /// Lights used while capturing the initialization views.
    pub init_lights: Vec<PointLight>,
    /// Lights used for the training views.
    pub lights: Vec<PointLight>,
    pub occluders: Vec<Aabb>,
    pub active_view_mask: Vec<bool>,
    pub background: Vec3,
    pub depth_quantum: f64,
    bvh: Bvh,
}

fn orbit(azimuth: f64, elevation: f64, distance: f64) -> Vec3 {
    Vec3::new(elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin()) * distance
}

impl SceneConfig {
    /// The standard rig: 4 depth cameras, 8 ring RGB cameras plus one overhead,
    /// 8 ring lights plus one overhead.
    pub fn new(object: SceneObject, rig: &RigConfig) -> Self {
        let intr = Intrinsics::from_fov(rig.image_size, rig.fov_deg.to_radians());
        let cam = |eye: Vec3| CameraModel { intrinsics: intr, pose: Pose::look_at(eye, Vec3::zeros(), Vec3::z()) };
        let depth_cameras = (0..4)
            .map(|k| cam(orbit(k as f64 * PI / 2.0, rig.depth_elevation_deg.to_radians(), rig.camera_distance)))
            .collect();
        let mut rgb_cameras: Vec<CameraModel> = (0..8)
            .map(|k| cam(orbit(k as f64 * PI / 4.0, rig.rgb_elevation_deg.to_radians(), rig.camera_distance)))
            .collect();
        rgb_cameras.push(cam(Vec3::new(0.0, 0.0, rig.camera_distance)));
        let mut lights: Vec<PointLight> = (0..8)
            .map(|k| PointLight {
                position: orbit(k as f64 * PI / 4.0 + PI / 8.0, 0.5, rig.light_distance),
                intensity: rig.light_intensity,
            })
            .collect();
        lights.push(PointLight { position: Vec3::new(0.0, 0.0, rig.light_distance), intensity: rig.light_intensity });
        let bvh = Bvh::new(&object.mesh);
        Self {
            object: object.mesh,
            albedo: object.albedo,
            active_view_mask: vec![true; rgb_cameras.len()],
            rgb_cameras,
            depth_cameras,
            init_lights: lights.clone(),
            lights,
            occluders: Vec::new(),
            background: Vec3::from(crate::render::DEFAULT_BACKGROUND),
            depth_quantum: rig.depth_quantum,
            bvh,
        }
    }

    pub fn builtin(kind: ObjectKind, rig: &RigConfig) -> Self {
        Self::new(builtin_scene_object(kind), rig)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.active_view_mask.iter().any(|&a| a) || self.active_view_mask.len() != self.rgb_cameras.len() {
            return Err(Error::InvalidConfig("scene needs at least one active RGB view".into()));
        }
        if self.depth_cameras.is_empty() {
            return Err(Error::InvalidConfig("scene needs at least one depth camera".into()));
        }
        if self.albedo.len() != self.object.triangles.len() {
            return Err(Error::InvalidConfig("albedo must have one entry per face".into()));
        }
        Ok(())
    }

    pub fn active_views(&self) -> Vec<usize> {
        (0..self.rgb_cameras.len()).filter(|&i| self.active_view_mask[i]).collect()
    }

    /// Indices of the four overhead-corner views dropped under missing views.
    pub fn corner_views(&self) -> [usize; 4] {
        [1, 3, 5, 7]
    }

    pub fn object_bounds(&self) -> Aabb {
        let (min, max) = self.object.bounds();
        Aabb { min, max }
    }

    /// Nearest object hit: distance along the unit ray and face index.
    pub fn cast_object(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, usize)> {
        self.bvh.cast(&self.object, origin, dir)
    }

    /// Nearest occluder hit: distance, outward normal.
    pub fn cast_occluders(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, Vec3)> {
        self.occluders
            .iter()
            .filter_map(|b| b.ray_hit(origin, dir))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

/// Lambertian radiance before clamping.
pub fn shade_unclamped(point: &Vec3, normal: &Vec3, albedo: &Vec3, lights: &[PointLight]) -> Vec3 {
    let mut irradiance = 0.0;
    for l in lights {
        let to_light = l.position - point;
        let d2 = to_light.norm_squared();
        let cos = normal.dot(&to_light) / d2.sqrt();
        if cos > 0.0 {
            irradiance += l.intensity * cos / d2;
        }
    }
    albedo * irradiance
}

#[derive(Clone, Debug)]
pub struct SensorFrame {
    pub rgb: RgbImage,
    /// Depth including occluder returns.
    pub depth: DepthImage,
    /// Depth with occluder hits recorded as no return, used for initialization.
    pub init_depth: DepthImage,
}

/// Ray-casts one view under `lights`.
pub fn synth_render_lit(scene: &SceneConfig, cam: &CameraModel, lights: &[PointLight]) -> SensorFrame {
    let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
    let mut rgb = RgbImage::filled(w, h, scene.background);
    let mut depth = DepthImage::new(w, h);
    let mut init_depth = DepthImage::new(w, h);
    let forward = cam.pose.r.column(2).into_owned();
    let quantize = |z: f64| {
        if scene.depth_quantum > 0.0 {
            (z / scene.depth_quantum).round() * scene.depth_quantum
        } else {
            z
        }
    };
    for v in 0..h {
        for u in 0..w {
            let (o, d) = cam.ray(u as f64, v as f64);
            let obj = scene.cast_object(&o, &d);
            let occ = scene.cast_occluders(&o, &d);
            let z_of = |t: f64| t * d.dot(&forward);
            match (obj, occ) {
                (Some((t, _)), Some((s, n))) if s < t => {
                    let p = o + d * s;
                    rgb.set(u, v, shade_unclamped(&p, &n, &Vec3::from(OCCLUDER_ALBEDO), lights).map(|c| c.clamp(0.0, 1.0)));
                    depth.set(u, v, quantize(z_of(s)));
                }
                (None, Some((s, n))) => {
                    let p = o + d * s;
                    rgb.set(u, v, shade_unclamped(&p, &n, &Vec3::from(OCCLUDER_ALBEDO), lights).map(|c| c.clamp(0.0, 1.0)));
                    depth.set(u, v, quantize(z_of(s)));
                }
                (Some((t, f)), _) => {
                    let p = o + d * t;
                    let c = shade_unclamped(&p, &scene.object.normals[f], &scene.albedo[f], lights);
                    rgb.set(u, v, c.map(|c| c.clamp(0.0, 1.0)));
                    let z = quantize(z_of(t));
                    depth.set(u, v, z);
                    init_depth.set(u, v, z);
                }
                (None, None) => {}
            }
        }
    }
    SensorFrame { rgb, depth, init_depth }
}

/// Ray-casts one view under the training lights.
pub fn synth_render(scene: &SceneConfig, cam: &CameraModel) -> SensorFrame {
    synth_render_lit(scene, cam, &scene.lights)
}

/// Fraction of the object's silhouette in `cam` hidden by `block`.
pub fn occluded_fraction(scene: &SceneConfig, cam: &CameraModel, block: &Aabb) -> f64 {
    let (mut seen, mut hidden) = (0usize, 0usize);
    for v in 0..cam.intrinsics.height {
        for u in 0..cam.intrinsics.width {
            let (o, d) = cam.ray(u as f64, v as f64);
            if let Some((t, _)) = scene.cast_object(&o, &d) {
                seen += 1;
                if block.ray_hit(&o, &d).is_some_and(|(s, _)| s < t) {
                    hidden += 1;
                }
            }
        }
    }
    if seen == 0 {
        0.0
    } else {
        hidden as f64 / seen as f64
    }
}

/// Blocks placed in front of three depth cameras, clear of the object bounds.
fn occluder_blocks(scene: &SceneConfig) -> Vec<Aabb> {
    let bounds = scene.object_bounds();
    let size = bounds.max - bounds.min;
    let half = Vec3::new(0.16, 0.16, 0.22) * size.max();
    let gap = 0.08 * size.max();
    [0usize, 1, 2]
        .iter()
        .map(|&k| {
            let eye = scene.depth_cameras[k].pose.center();
            let horiz = Vec3::new(eye.x, eye.y, 0.0).normalize();
            // support of the bounds along the horizontal sight direction
            let clear: f64 = (0..3).map(|a| (bounds.min[a] * horiz[a]).max(bounds.max[a] * horiz[a])).sum();
            let along = clear + gap + half.x.max(half.y);
            let p = horiz * along;
            // on the sight line from the camera to the object center, nudged down
            let t = along / Vec3::new(eye.x, eye.y, 0.0).norm();
            let z = eye.z * t - 0.35 * half.z;
            Aabb::from_center(Vec3::new(p.x, p.y, z), half)
        })
        .collect()
}

/// Returns the scene altered for `condition`.
pub fn apply_condition(scene: &SceneConfig, condition: Condition) -> Result<SceneConfig> {
    let mut out = scene.clone();
    match condition {
        Condition::Clean => {}
        Condition::DeterioratedLight => {
            let top = scene
                .init_lights
                .iter()
                .copied()
                .max_by(|a, b| a.position.z.total_cmp(&b.position.z))
                .ok_or_else(|| Error::InvalidConfig("scene has no lights".into()))?;
            out.lights = vec![top];
        }
        Condition::MissingViews => {
            for i in scene.corner_views() {
                if i < out.active_view_mask.len() {
                    out.active_view_mask[i] = false;
                }
            }
        }
        Condition::Occlusion => {
            out.occluders.extend(occluder_blocks(scene));
        }
    }
    out.validate()?;
    Ok(out)
}

#[derive(Clone, Debug)]
struct BvhNode {
    min: Vec3,
    max: Vec3,
    /// Leaf: range into `order`; inner: child indices.
    start: usize,
    count: usize,
    left: usize,
    right: usize,
}

#[derive(Clone, Debug, Default)]
struct Bvh {
    nodes: Vec<BvhNode>,
    order: Vec<usize>,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    fn new(mesh: &TriangleMesh) -> Self {
        let mut bvh = Bvh { nodes: Vec::new(), order: (0..mesh.triangles.len()).collect() };
        if !bvh.order.is_empty() {
            let centroids: Vec<Vec3> = (0..mesh.triangles.len())
                .map(|f| {
                    let [a, b, c] = mesh.triangle(f);
                    (a + b + c) / 3.0
                })
                .collect();
            let n = bvh.order.len();
            bvh.build(mesh, &centroids, 0, n);
        }
        bvh
    }

    fn build(&mut self, mesh: &TriangleMesh, centroids: &[Vec3], start: usize, end: usize) -> usize {
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for &f in &self.order[start..end] {
            for v in mesh.triangle(f) {
                min = min.inf(&v);
                max = max.sup(&v);
            }
        }
        let slot = self.nodes.len();
        self.nodes.push(BvhNode { min, max, start, count: end - start, left: 0, right: 0 });
        if end - start > LEAF_SIZE {
            let mut cmin = Vec3::repeat(f64::INFINITY);
            let mut cmax = Vec3::repeat(f64::NEG_INFINITY);
            for &f in &self.order[start..end] {
                cmin = cmin.inf(&centroids[f]);
                cmax = cmax.sup(&centroids[f]);
            }
            let axis = (cmax - cmin).imax();
            let mid = (start + end) / 2;
            self.order[start..end]
                .select_nth_unstable_by(mid - start, |&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b)));
            let left = self.build(mesh, centroids, start, mid);
            let right = self.build(mesh, centroids, mid, end);
            let node = &mut self.nodes[slot];
            node.count = 0;
            node.left = left;
            node.right = right;
        }
        slot
    }

    fn cast(&self, mesh: &TriangleMesh, origin: &Vec3, dir: &Vec3) -> Option<(f64, usize)> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = dir.map(|d| 1.0 / d);
        let mut best: Option<(f64, usize)> = None;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            let limit = best.map_or(f64::INFINITY, |b| b.0);
            if !slab_hit(&node.min, &node.max, origin, &inv, limit) {
                continue;
            }
            if node.count > 0 {
                for &f in &self.order[node.start..node.start + node.count] {
                    let [a, b, c] = mesh.triangle(f);
                    if let Some(t) = ray_triangle(origin, dir, &a, &b, &c) {
                        if best.is_none_or(|(bt, bf)| t < bt || (t == bt && f < bf)) {
                            best = Some((t, f));
                        }
                    }
                }
            } else {
                stack.push(node.right);
                stack.push(node.left);
            }
        }
        best
    }
}

fn slab_hit(min: &Vec3, max: &Vec3, origin: &Vec3, inv: &Vec3, limit: f64) -> bool {
    let mut t0 = 0.0f64;
    let mut t1 = limit;
    for a in 0..3 {
        let (mut lo, mut hi) = ((min[a] - origin[a]) * inv[a], (max[a] - origin[a]) * inv[a]);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        t0 = t0.max(lo);
        t1 = t1.min(hi);
        if t0 > t1 {
            return false;
        }
    }
    true
}

/// Möller–Trumbore; hits at positive distance only, either winding.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 1e-9).then_some(t)
}
