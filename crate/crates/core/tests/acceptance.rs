//! Acceptance suite: one PASS/FAIL line per criterion.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use touchsplat::camera::{project_covariance, CameraModel, Intrinsics, Pose, RgbImage};
use touchsplat::geometry::{covariance, directional_radius, GaussianPrimitive, Vec3};
use touchsplat::losses::{image_loss, touch_loss, LossWeights};
use touchsplat::metrics::{chamfer, fscore, jsd, MetricsRecord};
use touchsplat::render::{render, render_backward, GaussianGrad, CULL_SIGMA};
use touchsplat::scene::{Condition, ObjectKind};
use touchsplat::touch::{greedy_cover, nn_gap_points, select_sparse_centers, BoundarySet};
use touchsplat::trainer::{Experiment, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    let q = Quaternion::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    UnitQuaternion::from_quaternion(q)
}

fn random_gaussian(rng: &mut ChaCha8Rng, mu: Vec3, scale: (f64, f64)) -> GaussianPrimitive {
    let scales = Vec3::from_fn(|_, _| rng.gen_range(scale.0..scale.1));
    let color = Vec3::from_fn(|_, _| rng.gen_range(0.05..0.95));
    GaussianPrimitive::new(mu, random_rotation(rng), scales, rng.gen_range(0.2..0.8), color).unwrap()
}

fn directional_radius_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let g = random_gaussian(&mut rng, Vec3::zeros(), (0.05, 3.0));
        let v = random_unit(&mut rng) * rng.gen_range(0.01..10.0);
        let r = directional_radius(&g, &v).unwrap();
        // march outward along the ray until the Mahalanobis distance crosses 1, then bisect
        let inv = covariance(&g).try_inverse().unwrap();
        let level = |t: f64| {
            let x = v.normalize() * t;
            (x.transpose() * inv * x)[(0, 0)] - 1.0
        };
        let step = 1e-3;
        let mut hi = step;
        while level(hi) < 0.0 {
            hi += step;
        }
        let mut lo = hi - step;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if level(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        worst = worst.max((r - 0.5 * (lo + hi)).abs() / r);
    }
    let elapsed = start.elapsed();
    outcome(worst < 1e-6 && elapsed < Duration::from_secs(5), format!("max rel err {worst:.2e}, {elapsed:.2?}"))
}

/// Relative error of the gradient vector of one parameter class.
fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

const CLASSES: [&str; 5] = ["mu", "rotation", "scales", "opacity", "color"];

fn param(g: &mut GaussianPrimitive, class: usize, k: usize) -> &mut f64 {
    match class {
        0 => &mut g.mu[k],
        1 => match k {
            0 => &mut g.rotation.w,
            1 => &mut g.rotation.i,
            2 => &mut g.rotation.j,
            _ => &mut g.rotation.k,
        },
        2 => &mut g.scales[k],
        3 => &mut g.opacity,
        _ => &mut g.color[k],
    }
}

fn grad_entry(g: &GaussianGrad, class: usize, k: usize) -> f64 {
    match class {
        0 => g.mu[k],
        1 => g.rotation[k],
        2 => g.scales[k],
        3 => g.opacity,
        _ => g.color[k],
    }
}

fn class_size(class: usize) -> usize {
    match class {
        1 => 4,
        3 => 1,
        _ => 3,
    }
}

/// Central differences of `f` for every parameter of every primitive, grouped by class.
fn finite_difference_check(
    model: &[GaussianPrimitive],
    grads: &[GaussianGrad],
    classes: &[usize],
    f: impl Fn(&[GaussianPrimitive]) -> f64,
) -> Vec<(usize, f64)> {
    let h = 1e-5;
    classes
        .iter()
        .map(|&class| {
            let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
            for i in 0..model.len() {
                for k in 0..class_size(class) {
                    let mut plus = model.to_vec();
                    *param(&mut plus[i], class, k) += h;
                    let mut minus = model.to_vec();
                    *param(&mut minus[i], class, k) -= h;
                    numeric.push((f(&plus) - f(&minus)) / (2.0 * h));
                    analytic.push(grad_entry(&grads[i], class, k));
                }
            }
            (class, rel_err(&analytic, &numeric))
        })
        .collect()
}

fn gradient_suites() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let camera = CameraModel { intrinsics: Intrinsics::new(8.0, 8.0, 3.5, 3.5, 8, 8).unwrap(), pose: Pose::identity() };
    let background = Vec3::new(0.5, 0.5, 0.5);
    let model: Vec<GaussianPrimitive> = (0..5)
        .map(|i| {
            let mu = Vec3::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), 3.0 + 0.4 * i as f64);
            random_gaussian(&mut rng, mu, (0.15, 0.5))
        })
        .collect();
    let mut truth = RgbImage::filled(8, 8, Vec3::zeros());
    for v in 0..8 {
        for u in 0..8 {
            truth.set(u, v, Vec3::from_fn(|_, _| rng.gen_range(0.0..1.0)));
        }
    }
    let weights = LossWeights::default();
    let loss = |m: &[GaussianPrimitive]| image_loss(&render(m, &camera, &background).color, &truth, &weights).unwrap().value;
    let buffers = render(&model, &camera, &background);
    let upstream = image_loss(&buffers.color, &truth, &weights).unwrap();
    let grads = render_backward(&model, &camera, &background, &buffers, &upstream.grad).unwrap();
    let image = finite_difference_check(&model, &grads, &[0, 1, 2, 3, 4], loss);

    let pair_model: Vec<GaussianPrimitive> = (0..5)
        .map(|_| {
            let mu = Vec3::from_fn(|_, _| rng.gen_range(-1.5..1.5));
            random_gaussian(&mut rng, mu, (0.2, 1.0))
        })
        .collect();
    let pairs: Vec<(usize, usize)> = (0..5).flat_map(|i| (i + 1..5).map(move |j| (i, j))).collect();
    let analytic = touch_loss(&pair_model, &pairs).unwrap();
    let touch = finite_difference_check(&pair_model, &analytic.grads, &[0, 1, 2], |m| touch_loss(m, &pairs).unwrap().value);

    let elapsed = start.elapsed();
    let worst = image.iter().chain(&touch).map(|&(_, e)| e).fold(0.0, f64::max);
    let fmt = |v: &[(usize, f64)]| v.iter().map(|(c, e)| format!("{} {e:.1e}", CLASSES[*c])).collect::<Vec<_>>().join(", ");
    outcome(
        worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!("image [{}]; touch [{}]; {elapsed:.2?}", fmt(&image), fmt(&touch)),
    )
}

/// Back-to-front "over" compositing of the depth-sorted splats at one pixel.
fn over_composite(model: &[GaussianPrimitive], camera: &CameraModel, background: &Vec3, u: usize, v: usize) -> Vec3 {
    let mut order: Vec<usize> = (0..model.len()).collect();
    let depth = |i: usize| camera.pose.world_to_camera(&model[i].mu).z;
    order.sort_by(|&a, &b| depth(a).total_cmp(&depth(b)).then(a.cmp(&b)));
    let mut color = *background;
    for &i in order.iter().rev() {
        let g = &model[i];
        let mu_cam = camera.pose.world_to_camera(&g.mu);
        let cov = project_covariance(&covariance(g), &camera.pose, &mu_cam, &camera.intrinsics).unwrap();
        let mean = camera.intrinsics.project(&mu_cam);
        let d = nalgebra::Vector2::new(u as f64, v as f64) - mean;
        if d.x.abs() > CULL_SIGMA * cov[(0, 0)].sqrt() || d.y.abs() > CULL_SIGMA * cov[(1, 1)].sqrt() {
            continue;
        }
        let alpha = (g.opacity * (-0.5 * d.dot(&(cov.try_inverse().unwrap() * d))).exp()).min(0.99);
        color = g.color * alpha + color * (1.0 - alpha);
    }
    color
}

fn compositing_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let camera = CameraModel { intrinsics: Intrinsics::new(12.0, 12.0, 7.5, 7.5, 16, 16).unwrap(), pose: Pose::identity() };
    let background = Vec3::new(0.5, 0.5, 0.5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=8);
        // sorted by construction: depth grows with the index
        let model: Vec<GaussianPrimitive> = (0..n)
            .map(|i| {
                let mu = Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 2.0 + 0.3 * i as f64);
                let mut g = random_gaussian(&mut rng, mu, (0.1, 0.5));
                g.opacity = rng.gen_range(0.05..0.6);
                g
            })
            .collect();
        let image = render(&model, &camera, &background).color;
        for v in 0..16 {
            for u in 0..16 {
                worst = worst.max((image.get(u, v) - over_composite(&model, &camera, &background, u, v)).amax());
            }
        }
    }
    outcome(worst <= 1e-10, format!("max abs diff {worst:.2e} over 100 scenes"))
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<Vec3> {
    (0..n).map(|_| Vec3::from_fn(|_, _| rng.gen_range(-spread..spread))).collect()
}

fn brute_nearest(p: &Vec3, set: &[Vec3]) -> f64 {
    set.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut failures = Vec::new();
    for trial in 0..20 {
        let a = random_cloud(&mut rng, 100, 1.0);
        let b = random_cloud(&mut rng, 100, 1.0);
        let mean_nn = |x: &[Vec3], y: &[Vec3]| x.iter().map(|p| brute_nearest(p, y)).sum::<f64>() / x.len() as f64;
        let cd = 0.5 * (mean_nn(&a, &b) + mean_nn(&b, &a)) * 1000.0;
        if chamfer(&a, &b).unwrap() != cd || chamfer(&b, &a).unwrap() != cd || chamfer(&a, &a).unwrap() != 0.0 {
            failures.push(format!("chamfer trial {trial}"));
        }
        let tau = rng.gen_range(0.05..0.4);
        let frac = |x: &[Vec3], y: &[Vec3]| x.iter().filter(|p| brute_nearest(p, y) <= tau).count() as f64 / x.len() as f64;
        let (p, r) = (frac(&a, &b), frac(&b, &a));
        let f = if p + r == 0.0 { 0.0 } else { 200.0 * (p * r) / (p + r) };
        if fscore(&a, &b, tau).unwrap() != f || fscore(&b, &a, tau).unwrap() != f || fscore(&a, &a, tau).unwrap() != 100.0 {
            failures.push(format!("fscore trial {trial}"));
        }
        if fscore(&a, &b, tau * 1.5).unwrap() < f {
            failures.push(format!("fscore monotonicity trial {trial}"));
        }
        let grid = [2, 4, 8, 32][trial % 4];
        let value = jsd(&a, &b, grid).unwrap();
        let reference = jsd_reference(&a, &b, grid);
        if (value - reference).abs() > 1e-12 || (jsd(&b, &a, grid).unwrap() - value).abs() > 1e-12 || jsd(&a, &a, grid).unwrap() != 0.0 {
            failures.push(format!("jsd trial {trial}: {value} vs {reference}"));
        }
        if !(0.0..=1.0).contains(&value) {
            failures.push(format!("jsd range trial {trial}"));
        }
    }
    let far: Vec<Vec3> = random_cloud(&mut rng, 100, 1.0).iter().map(|p| p + Vec3::new(10.0, 0.0, 0.0)).collect();
    let near = random_cloud(&mut rng, 100, 1.0);
    if (jsd(&near, &far, 32).unwrap() - 1.0).abs() > 1e-12 || fscore(&near, &far, 0.1).unwrap() != 0.0 {
        failures.push("disjoint sets".into());
    }
    outcome(failures.is_empty(), if failures.is_empty() { "20 trials of 100-point sets".into() } else { failures.join("; ") })
}

/// Direct summation over occupied cells with explicit base-2 KL terms.
fn jsd_reference(a: &[Vec3], b: &[Vec3], grid: usize) -> f64 {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in a.iter().chain(b) {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let cell = |p: &Vec3| -> (usize, usize, usize) {
        let c = |k: usize| (((p[k] - lo[k]) / (hi[k] - lo[k]) * grid as f64).floor() as usize).min(grid - 1);
        (c(0), c(1), c(2))
    };
    let mut counts = std::collections::BTreeMap::<(usize, usize, usize), (f64, f64)>::new();
    for p in a {
        counts.entry(cell(p)).or_default().0 += 1.0 / a.len() as f64;
    }
    for q in b {
        counts.entry(cell(q)).or_default().1 += 1.0 / b.len() as f64;
    }
    let kl = |x: f64, m: f64| if x > 0.0 { x * (x / m).ln() / std::f64::consts::LN_2 } else { 0.0 };
    counts.values().map(|&(p, q)| 0.5 * kl(p, 0.5 * (p + q)) + 0.5 * kl(q, 0.5 * (p + q))).sum()
}

fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            Vector3::new(r * t.cos(), r * t.sin(), z)
        })
        .collect()
}

fn isotropic(points: &[Vec3]) -> Vec<GaussianPrimitive> {
    points.iter().map(|p| GaussianPrimitive::isotropic(*p, 0.01, 0.5, Vec3::repeat(0.5)).unwrap()).collect()
}

fn brute_greedy(points: &[Vec3], radius: f64, budget: usize) -> Vec<usize> {
    let mut covered = vec![false; points.len()];
    let mut picks = Vec::new();
    for _ in 0..budget {
        let gain = |i: usize| (0..points.len()).filter(|&j| !covered[j] && (points[i] - points[j]).norm() <= radius).count();
        let best = (0..points.len()).fold((0, 0), |acc, i| if gain(i) > acc.1 { (i, gain(i)) } else { acc });
        if best.1 == 0 {
            break;
        }
        for j in 0..points.len() {
            if (points[best.0] - points[j]).norm() <= radius {
                covered[j] = true;
            }
        }
        picks.push(best.0);
    }
    picks
}

fn sampling_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();
    for trial in 0..10 {
        let n = rng.gen_range(2..=200);
        let points = random_cloud(&mut rng, n, 1.0);
        let gaps = nn_gap_points(&points).unwrap();
        for (i, p) in points.iter().enumerate() {
            let others: Vec<Vec3> = points.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, q)| *q).collect();
            if gaps[i] != brute_nearest(p, &others) {
                failures.push(format!("nn_gap trial {trial} point {i}"));
                break;
            }
        }
    }
    for trial in 0..30 {
        let n = rng.gen_range(1..=25);
        let points = random_cloud(&mut rng, n, 1.0);
        let radius = rng.gen_range(0.2..1.0);
        let budget = rng.gen_range(1..=4);
        let expected: Vec<Vec3> = brute_greedy(&points, radius, budget).into_iter().map(|i| points[i]).collect();
        let got = greedy_cover(&mut BoundarySet::new(points.clone()), radius, budget).unwrap();
        if got != expected {
            failures.push(format!("greedy trial {trial}"));
        }
    }

    // a dense shell with two emptied caps, each holding one stray point
    let axis = Vec3::x();
    let cap = 30f64.to_radians().cos();
    let mut shell: Vec<Vec3> = fibonacci_sphere(400).into_iter().filter(|p| p.dot(&axis).abs() < cap).collect();
    let strays = [Vec3::new(1.0, 0.05, 0.0).normalize(), Vec3::new(-1.0, 0.0, -0.08).normalize()];
    shell.extend(strays);
    let centers = select_sparse_centers(&isotropic(&shell), 2).unwrap();
    let gaps = nn_gap_points(&shell).unwrap();
    let mut by_gap: Vec<usize> = (0..shell.len()).collect();
    by_gap.sort_by(|&a, &b| gaps[b].total_cmp(&gaps[a]).then(a.cmp(&b)));
    let top: Vec<Vec3> = by_gap[..2].iter().map(|&i| shell[i]).collect();
    let in_gap = |c: &Vec3| c.dot(&axis).abs() >= cap;
    let one_each = centers.iter().any(|c| c.x > 0.0) && centers.iter().any(|c| c.x < 0.0);
    if !(centers.iter().all(in_gap) && one_each && centers == top) {
        failures.push(format!("engineered gaps: picked {centers:?}"));
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() { "nn_gap 10 sets ≤ 200, greedy 30 sets ≤ 25, engineered gaps".into() } else { failures.join("; ") },
    )
}

struct Pair {
    scene: ObjectKind,
    condition: Condition,
    on: Vec<MetricsRecord>,
    off: Vec<MetricsRecord>,
    slowest: Duration,
}

fn config(scene: ObjectKind, condition: Condition, touch: bool) -> TrainConfig {
    let mut cfg = TrainConfig { scene, condition, iterations: 400, seed: 0, ..TrainConfig::default() };
    cfg.touch.enabled = touch;
    cfg.rig.image_size = 64;
    cfg
}

fn run_pairs() -> Vec<Pair> {
    let mut pairs = Vec::new();
    for scene in ObjectKind::ALL {
        for condition in Condition::DEGRADED {
            let mut logs = Vec::new();
            let mut slowest = Duration::ZERO;
            for touch in [true, false] {
                let cfg = config(scene, condition, touch);
                let start = Instant::now();
                let state = Experiment::new(cfg.clone()).unwrap().run(None).unwrap();
                slowest = slowest.max(start.elapsed());
                assert!(state.gaussians.len() <= cfg.max_gaussians);
                logs.push(state.log);
            }
            let off = logs.pop().unwrap();
            let on = logs.pop().unwrap();
            pairs.push(Pair { scene, condition, on, off, slowest });
        }
    }
    pairs
}

fn end_to_end(pairs: &[Pair]) -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for p in pairs {
        let (on, off) = (p.on.last().unwrap(), p.off.last().unwrap());
        let cd_limit = if p.condition == Condition::Occlusion { 0.3 } else { 0.6 };
        let cd = on.cd_mm / off.cd_mm;
        let df = on.fscore_pct - off.fscore_pct;
        let js = on.jsd / off.jsd;
        let ok = cd <= cd_limit && df >= 10.0 && js <= 0.7 && p.slowest < Duration::from_secs(600);
        pass &= ok;
        lines.push(format!(
            "    {} {:>7}/{:<9} CD {:.1}/{:.1} mm = {cd:.2} (≤ {cd_limit}), F {:+.1} pp, JSD {js:.2}, {:.1?}",
            if ok { "ok" } else { "!!" },
            p.scene.to_string(),
            p.condition.to_string(),
            on.cd_mm,
            off.cd_mm,
            df,
            p.slowest
        ));
    }
    outcome(pass, format!("\n{}", lines.join("\n")))
}

fn monotone_trend(pairs: &[Pair]) -> Outcome {
    let mut bad = Vec::new();
    for p in pairs {
        let at = |it: usize| p.on.iter().find(|r| r.iteration == it).map(|r| r.cd_mm);
        match (at(100), at(400)) {
            (Some(a), Some(b)) if b < a => {}
            (a, b) => bad.push(format!("{}/{}: {a:?} -> {b:?}", p.scene, p.condition)),
        }
    }
    outcome(bad.is_empty(), if bad.is_empty() { format!("{} touch runs", pairs.len()) } else { bad.join("; ") })
}

fn determinism() -> Outcome {
    let cfg = config(ObjectKind::Hydrant, Condition::Occlusion, true);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        Experiment::new(cfg.clone()).unwrap().run(Some(d.path())).unwrap();
    }
    let same = ["metrics.csv", "model.ply"]
        .iter()
        .all(|f| std::fs::read(dirs[0].path().join(f)).unwrap() == std::fs::read(dirs[1].path().join(f)).unwrap());
    outcome(same, "metrics.csv and model.ply compared byte for byte")
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |name: &str, o: Outcome| {
        all &= o.pass;
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    report("directional radius oracle", directional_radius_oracle());
    report("gradient suites", gradient_suites());
    report("compositing identity", compositing_identity());
    report("metric oracles", metric_oracles());
    report("sampling oracles", sampling_oracles());
    let pairs = run_pairs();
    report("end-to-end improvement", end_to_end(&pairs));
    report("monotone trend", monotone_trend(&pairs));
    report("determinism", determinism());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
