//! Online reconstruction loop: depth initialization, photometric steps and
//! interleaved touch events.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{to_world, unproject, CameraModel, RgbImage};
use crate::error::{Error, Result};
use crate::geometry::{GaussianPrimitive, Origin, Vec3};
use crate::io::write_ply_points;
use crate::losses::{build_pair_set, image_loss, touch_loss, LossWeights};
use crate::metrics::{evaluate, save_csv, MetricsConfig, MetricsRecord};
use crate::optim::{Adam, LearningRates, Moments};
use crate::render::{render, render_backward, GaussianGrad};
use crate::scene::{
    apply_condition, sample_surface, synth_render, synth_render_lit, Condition, GroundTruth, ObjectKind, RigConfig,
    SceneConfig,
};
use crate::spatial::KdTree;
use crate::touch::{
    acquire_patch, build_proxy_mesh, extract_boundary, greedy_cover, median, nn_gap, prune_mask, select_sparse_centers,
    spawn_touch_gaussians, SurfaceIndex,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewSchedule {
    RoundRobin,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TouchConfig {
    pub enabled: bool,
    /// Iterations between touch events.
    pub cadence: usize,
    pub patches_per_event: usize,
    /// Contact points per patch.
    pub k: usize,
    /// Switch to the boundary stage once max gap < ratio · median gap.
    pub stage_switch_ratio: f64,
    pub proxy_resolution: usize,
    /// Greedy cover radius in meters; `None` uses 3× the median ground-truth spacing.
    pub coverage_radius: Option<f64>,
    /// Visual neighbors within this multiple of the patch spacing join the touch pair region.
    pub region_factor: f64,
}

impl Default for TouchConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            cadence: 50,
            patches_per_event: 2,
            k: 50,
            stage_switch_ratio: 1.5,
            proxy_resolution: 40,
            coverage_radius: None,
            region_factor: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// Desired spacing between initial centers; voxels are twice this size.
    pub target_spacing: f64,
    pub opacity: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { target_spacing: 0.04, opacity: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub scene: ObjectKind,
    pub condition: Condition,
    pub iterations: usize,
    pub seed: u64,
    pub learning_rates: LearningRates,
    pub loss: LossWeights,
    pub touch: TouchConfig,
    pub init: InitConfig,
    /// Cap on the model size, including every primitive touch may add.
    pub max_gaussians: usize,
    pub ground_truth_samples: usize,
    pub metric_cadence: usize,
    pub metrics: MetricsConfig,
    pub rig: RigConfig,
    pub view_schedule: ViewSchedule,
    /// Write PNG renders of every active view this often; 0 disables.
    pub render_cadence: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scene: ObjectKind::Cube,
            condition: Condition::Clean,
            iterations: 400,
            seed: 0,
            learning_rates: LearningRates::default(),
            loss: LossWeights::default(),
            touch: TouchConfig::default(),
            init: InitConfig::default(),
            max_gaussians: 2500,
            ground_truth_samples: 1500,
            metric_cadence: 50,
            metrics: MetricsConfig::default(),
            rig: RigConfig::default(),
            view_schedule: ViewSchedule::RoundRobin,
            render_cadence: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.learning_rates.validate()?;
        self.loss.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.touch.cadence == 0 || self.metric_cadence == 0 {
            return bad("cadences must be at least 1");
        }
        if self.touch.patches_per_event == 0 || self.touch.k == 0 {
            return bad("touch events need at least one patch of one point");
        }
        if !(self.init.target_spacing > 0.0) || !(self.init.opacity > 0.0 && self.init.opacity <= 1.0) {
            return bad("invalid initialization settings");
        }
        if self.ground_truth_samples < self.touch.k {
            return bad("ground truth must hold at least k samples");
        }
        if self.rig.image_size == 0 {
            return bad("image size must be positive");
        }
        Ok(())
    }

    /// Touch primitives a full run can add.
    pub fn planned_touch_primitives(&self) -> usize {
        self.iterations.div_ceil(self.touch.cadence) * self.touch.patches_per_event * self.touch.k
    }

    /// Initialization budget; the same whether or not touch is enabled.
    pub fn init_budget(&self) -> usize {
        self.max_gaussians.saturating_sub(self.planned_touch_primitives()).max(1)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Sparsity,
    Boundary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TouchEventRecord {
    pub iteration: usize,
    pub stage: Stage,
    pub centers: Vec<[f64; 3]>,
    pub spawned: usize,
    pub pruned: usize,
    /// No boundary was left to probe.
    pub skipped: bool,
}

#[derive(Clone, Debug, Default)]
pub struct PhaseTimes {
    pub init: Duration,
    pub visual: Duration,
    pub touch: Duration,
    pub metrics: Duration,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub gaussians: Vec<GaussianPrimitive>,
    pub moments: Vec<Moments>,
    pub iteration: usize,
    pub stage: Stage,
    pub log: Vec<MetricsRecord>,
    pub touch_log: Vec<TouchEventRecord>,
    pub pairs: Vec<(usize, usize)>,
    pub times: PhaseTimes,
    view_cursor: usize,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(gaussians: Vec<GaussianPrimitive>, seed: u64) -> Self {
        let moments = gaussians.iter().map(Moments::for_primitive).collect();
        Self {
            gaussians,
            moments,
            iteration: 0,
            stage: Stage::Sparsity,
            log: Vec::new(),
            touch_log: Vec::new(),
            pairs: Vec::new(),
            times: PhaseTimes::default(),
            view_cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f7a_1e00),
        }
    }

    pub fn touch_count(&self) -> usize {
        self.gaussians.iter().filter(|g| g.origin == Origin::Touch).count()
    }

    fn remove(&mut self, mask: &[bool]) -> usize {
        let mut it = mask.iter();
        self.gaussians.retain(|_| !*it.next().unwrap());
        let mut it = mask.iter();
        self.moments.retain(|_| !*it.next().unwrap());
        mask.iter().filter(|&&m| m).count()
    }
}

/// Everything fixed for the duration of a run.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: TrainConfig,
    pub scene: SceneConfig,
    pub ground_truth: GroundTruth,
    pub surface: SurfaceIndex,
    /// Training targets for each RGB camera (active or not).
    pub targets: Vec<RgbImage>,
    /// Scene extent used to scale the position learning rate.
    pub extent: f64,
    coverage_radius: f64,
    adam: Adam,
}

impl Experiment {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let base = SceneConfig::builtin(config.scene, &config.rig);
        Self::with_scene(config, base)
    }

    /// Uses `base` (without the condition applied) instead of a builtin object.
    pub fn with_scene(config: TrainConfig, base: SceneConfig) -> Result<Self> {
        config.validate()?;
        let scene = apply_condition(&base, config.condition)?;
        let ground_truth = sample_surface(&scene.object, config.ground_truth_samples, config.seed);
        let surface = SurfaceIndex::new(ground_truth.points.clone(), ground_truth.normals.clone())?;
        let targets = scene.rgb_cameras.iter().map(|c| synth_render(&scene, c).rgb).collect();
        let coverage_radius = match config.touch.coverage_radius {
            Some(r) => r,
            None => {
                let gaps = if ground_truth.len() >= 2 { crate::touch::nn_gap_points(&ground_truth.points)? } else { vec![0.0] };
                3.0 * median(&gaps)
            }
        };
        let (lo, hi) = scene.object.bounds();
        let extent = 0.5 * (hi - lo).norm();
        Ok(Self { config, scene, ground_truth, surface, targets, extent, coverage_radius, adam: Adam::default() })
    }

    pub fn coverage_radius(&self) -> f64 {
        self.coverage_radius
    }

    /// Builds the initial model from the depth cameras.
    pub fn initialize(&self) -> Result<TrainState> {
        let start = Instant::now();
        let scene = &self.scene;
        let mut cloud = Vec::new();
        for cam in &scene.depth_cameras {
            let frame = synth_render_lit(scene, cam, &scene.init_lights);
            cloud.extend(unproject(&frame.init_depth, &cam.intrinsics).iter().map(|p| to_world(p, &cam.pose)));
        }
        if cloud.is_empty() {
            return Err(Error::EmptyInitialization);
        }
        let budget = self.config.init_budget();
        let mut voxel = 2.0 * self.config.init.target_spacing;
        let mut points = voxel_downsample(&cloud, voxel);
        while points.len() > budget {
            voxel *= 1.1;
            points = voxel_downsample(&cloud, voxel);
        }

        // colors come from the nearest RGB view that sees the point, lit as at initialization
        let views: Vec<(usize, RgbImage, crate::camera::DepthImage)> = scene
            .active_views()
            .into_iter()
            .map(|i| {
                let f = synth_render_lit(scene, &scene.rgb_cameras[i], &scene.init_lights);
                (i, f.rgb, f.depth)
            })
            .collect();
        let tree = KdTree::new(points.clone());
        let mut gaussians = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            let spacing = local_spacing(&tree, i).unwrap_or(self.config.init.target_spacing);
            let color = sample_color(p, scene, &views).unwrap_or(scene.background);
            gaussians.push(GaussianPrimitive::isotropic(*p, spacing, self.config.init.opacity, color)?);
        }
        let mut state = TrainState::new(gaussians, self.config.seed);
        state.times.init = start.elapsed();
        Ok(state)
    }

    fn next_view(&self, state: &mut TrainState) -> usize {
        let active = self.scene.active_views();
        match self.config.view_schedule {
            ViewSchedule::RoundRobin => {
                let v = active[state.view_cursor % active.len()];
                state.view_cursor += 1;
                v
            }
            ViewSchedule::Random => active[state.rng.gen_range(0..active.len())],
        }
    }

    /// One photometric step on the next view; returns the total loss.
    pub fn visual_step(&self, state: &mut TrainState) -> Result<f64> {
        let start = Instant::now();
        let view = self.next_view(state);
        let cam = &self.scene.rgb_cameras[view];
        let bg = self.scene.background;
        let buffers = render(&state.gaussians, cam, &bg);
        let img = image_loss(&buffers.color, &self.targets[view], &self.config.loss)?;
        let mut grads = render_backward(&state.gaussians, cam, &bg, &buffers, &img.grad)?;
        let mut total = img.value;
        if !state.pairs.is_empty() && self.config.loss.lambda_touch > 0.0 {
            let t = touch_loss(&state.gaussians, &state.pairs)?;
            total += self.config.loss.lambda_touch * t.value;
            for (g, tg) in grads.iter_mut().zip(&t.grads) {
                g.add_scaled(tg, self.config.loss.lambda_touch);
            }
        }
        self.apply(state, &grads);
        state.iteration += 1;
        state.times.visual += start.elapsed();
        Ok(total)
    }

    fn apply(&self, state: &mut TrainState, grads: &[GaussianGrad]) {
        for ((g, grad), m) in state.gaussians.iter_mut().zip(grads).zip(state.moments.iter_mut()) {
            self.adam.update(g, grad, m, &self.config.learning_rates, self.extent);
        }
    }

    /// Probes the surface, prunes contradicted primitives and spawns locked ones.
    pub fn touch_event(&self, state: &mut TrainState) -> Result<TouchEventRecord> {
        let start = Instant::now();
        let cfg = &self.config.touch;
        let mut record = TouchEventRecord {
            iteration: state.iteration,
            stage: state.stage,
            centers: Vec::new(),
            spawned: 0,
            pruned: 0,
            skipped: false,
        };
        if !cfg.enabled {
            record.skipped = true;
            return Ok(record);
        }
        if state.stage == Stage::Sparsity && state.gaussians.len() >= 2 {
            let gaps = nn_gap(&state.gaussians)?;
            let max = gaps.iter().copied().fold(0.0, f64::max);
            if max < cfg.stage_switch_ratio * median(&gaps) {
                state.stage = Stage::Boundary;
            }
        }
        record.stage = state.stage;
        let centers = match state.stage {
            Stage::Sparsity => select_sparse_centers(&state.gaussians, cfg.patches_per_event.min(state.gaussians.len()))?,
            Stage::Boundary => {
                let proxy = build_proxy_mesh(&state.gaussians, cfg.proxy_resolution)?;
                let mut boundary = extract_boundary(&proxy);
                // holes already probed need no second visit
                let touched: Vec<Vec3> =
                    state.gaussians.iter().filter(|g| g.origin == Origin::Touch).map(|g| g.mu).collect();
                boundary.cover_near(&touched, self.coverage_radius);
                if boundary.covered.iter().all(|&c| c) {
                    Vec::new()
                } else {
                    greedy_cover(&mut boundary, self.coverage_radius, cfg.patches_per_event)?
                }
            }
        };
        if centers.is_empty() {
            record.skipped = true;
            state.times.touch += start.elapsed();
            state.touch_log.push(record.clone());
            return Ok(record);
        }
        for c in &centers {
            let patch = acquire_patch(&self.surface, c, cfg.k)?;
            let mask = prune_mask(&state.gaussians, &patch, patch.bounding_radius());
            record.pruned += state.remove(&mask);
            let spawned = spawn_touch_gaussians(&patch, &state.gaussians, &self.scene.background);
            record.spawned += spawned.len();
            state.moments.extend(spawned.iter().map(Moments::for_primitive));
            state.gaussians.extend(spawned);
            record.centers.push([c.x, c.y, c.z]);
        }
        state.pairs = self.touch_pairs(state)?;
        state.times.touch += start.elapsed();
        state.touch_log.push(record.clone());
        Ok(record)
    }

    /// Touch primitives plus the visual primitives close to them.
    fn touch_pairs(&self, state: &TrainState) -> Result<Vec<(usize, usize)>> {
        let touch: Vec<usize> = (0..state.gaussians.len()).filter(|&i| state.gaussians[i].origin == Origin::Touch).collect();
        if touch.is_empty() {
            return Ok(Vec::new());
        }
        let spacing = median(&touch.iter().map(|&i| state.gaussians[i].scales.x).collect::<Vec<_>>());
        let reach = self.config.touch.region_factor * spacing;
        let tree = KdTree::new(touch.iter().map(|&i| state.gaussians[i].mu).collect());
        let mut region = touch.clone();
        region.extend((0..state.gaussians.len()).filter(|&i| {
            state.gaussians[i].origin == Origin::Visual && tree.nearest(&state.gaussians[i].mu).is_some_and(|n| n.dist() <= reach)
        }));
        region.sort_unstable();
        if region.len() < 2 {
            return Ok(Vec::new());
        }
        build_pair_set(&state.gaussians, &region, self.config.loss.neighbor_count)
    }

    pub fn record_metrics(&self, state: &mut TrainState) -> Result<MetricsRecord> {
        let start = Instant::now();
        let r = evaluate(&state.gaussians, &self.ground_truth.points, &self.config.metrics, state.iteration)?;
        if state.log.last().is_none_or(|l| l.iteration < r.iteration) {
            state.log.push(r);
        }
        state.times.metrics += start.elapsed();
        Ok(r)
    }

    /// Whether a touch event precedes optimizer step `it` (1-based).
    fn touch_due(&self, it: usize) -> bool {
        self.config.touch.enabled && (it - 1).is_multiple_of(self.config.touch.cadence)
    }

    /// Runs the full loop, writing exports into `out` when given.
    pub fn run(&self, out: Option<&Path>) -> Result<TrainState> {
        if let Some(dir) = out {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("run.json"), serde_json::to_string_pretty(&self.config)?)?;
        }
        let mut state = self.initialize()?;
        let result = self.train(&mut state, out);
        if let Some(dir) = out {
            // the log is flushed even when training aborts
            save_csv(&dir.join("metrics.csv"), &state.log)?;
            if result.is_ok() {
                export_model(&dir.join("model.ply"), &state.gaussians)?;
            }
        }
        result.map(|_| state)
    }

    fn train(&self, state: &mut TrainState, out: Option<&Path>) -> Result<()> {
        self.record_metrics(state)?;
        self.maybe_render(state, out)?;
        for it in 1..=self.config.iterations {
            if self.touch_due(it) {
                self.touch_event(state)?;
            }
            self.visual_step(state)?;
            if it % self.config.metric_cadence == 0 || it == self.config.iterations {
                self.record_metrics(state)?;
            }
            self.maybe_render(state, out)?;
        }
        Ok(())
    }

    fn maybe_render(&self, state: &TrainState, out: Option<&Path>) -> Result<()> {
        let (Some(dir), cadence) = (out, self.config.render_cadence) else { return Ok(()) };
        if cadence == 0 || (!state.iteration.is_multiple_of(cadence) && state.iteration != self.config.iterations) {
            return Ok(());
        }
        let renders = dir.join("renders");
        fs::create_dir_all(&renders)?;
        for i in self.scene.active_views() {
            let img = render(&state.gaussians, &self.scene.rgb_cameras[i], &self.scene.background).color;
            img.save_png(&renders.join(format!("view_{i}_{}.png", state.iteration)))?;
        }
        Ok(())
    }
}

/// Keeps, per occupied voxel, the point closest to the voxel's centroid.
pub fn voxel_downsample(points: &[Vec3], voxel: f64) -> Vec<Vec3> {
    let mut cells: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        cells.entry(p.map(|c| (c / voxel).floor() as i64).into()).or_default().push(i);
    }
    cells
        .values()
        .map(|idx| {
            let centroid = idx.iter().map(|&i| points[i]).sum::<Vec3>() / idx.len() as f64;
            let best = idx
                .iter()
                .copied()
                .min_by(|&a, &b| (points[a] - centroid).norm_squared().total_cmp(&(points[b] - centroid).norm_squared()).then(a.cmp(&b)))
                .unwrap();
            points[best]
        })
        .collect()
}

/// Mean distance to the three nearest other points.
fn local_spacing(tree: &KdTree, i: usize) -> Option<f64> {
    let near: Vec<f64> = tree.knn(&tree.points()[i], 4).iter().filter(|n| n.index != i).map(|n| n.dist()).collect();
    if near.is_empty() || near.iter().sum::<f64>() <= 0.0 {
        None
    } else {
        Some(near.iter().sum::<f64>() / near.len() as f64)
    }
}

fn sample_color(
    p: &Vec3,
    scene: &SceneConfig,
    views: &[(usize, RgbImage, crate::camera::DepthImage)],
) -> Option<Vec3> {
    let mut order: Vec<usize> = (0..views.len()).collect();
    let dist = |k: usize| (scene.rgb_cameras[views[k].0].pose.center() - p).norm();
    order.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
    let lookup = |k: usize, need_visible: bool| -> Option<Vec3> {
        let (i, rgb, depth) = &views[k];
        let cam: &CameraModel = &scene.rgb_cameras[*i];
        let pc = cam.pose.world_to_camera(p);
        if pc.z <= 0.0 {
            return None;
        }
        let uv = cam.intrinsics.project(&pc);
        let (u, v) = (uv.x.round(), uv.y.round());
        if u < 0.0 || v < 0.0 || u >= rgb.width as f64 || v >= rgb.height as f64 {
            return None;
        }
        let (u, v) = (u as usize, v as usize);
        if need_visible && (depth.get(u, v) - pc.z).abs() > 0.05 {
            return None;
        }
        Some(rgb.get(u, v))
    };
    order.iter().find_map(|&k| lookup(k, true)).or_else(|| order.iter().find_map(|&k| lookup(k, false)))
}

/// Binary PLY of the centers with the origin tag (0 visual, 1 touch).
pub fn export_model(path: &Path, gaussians: &[GaussianPrimitive]) -> Result<()> {
    let points: Vec<Vec3> = gaussians.iter().map(|g| g.mu).collect();
    let tags: Vec<u8> = gaussians.iter().map(|g| g.origin.tag()).collect();
    write_ply_points(path, &points, None, Some(("origin", &tags)))
}
