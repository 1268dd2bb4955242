use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use touchsplat::scene::{Condition, ObjectKind};
use touchsplat::trainer::{Experiment, TrainConfig};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SceneArg {
    Cube,
    Can,
    Hydrant,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ConditionArg {
    Light,
    Views,
    Occlusion,
    None,
}

/// Reconstruct a builtin object from simulated cameras, optionally with touch.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(long, value_enum)]
    scene: Option<SceneArg>,
    #[arg(long, value_enum)]
    condition: Option<ConditionArg>,
    #[arg(long, value_enum)]
    touch: Option<Toggle>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON file with TrainConfig fields; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn resolve(args: &Args) -> touchsplat::Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::from_json(&std::fs::read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = args.scene {
        cfg.scene = match s {
            SceneArg::Cube => ObjectKind::Cube,
            SceneArg::Can => ObjectKind::Can,
            SceneArg::Hydrant => ObjectKind::Hydrant,
        };
    }
    if let Some(c) = args.condition {
        cfg.condition = match c {
            ConditionArg::Light => Condition::DeterioratedLight,
            ConditionArg::Views => Condition::MissingViews,
            ConditionArg::Occlusion => Condition::Occlusion,
            ConditionArg::None => Condition::Clean,
        };
    }
    if let Some(t) = args.touch {
        cfg.touch.enabled = matches!(t, Toggle::On);
    }
    if let Some(n) = args.iters {
        cfg.iterations = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let run = || -> touchsplat::Result<()> {
        let cfg = resolve(&args)?;
        let exp = Experiment::new(cfg)?;
        let state = exp.run(Some(&args.out))?;
        for e in &state.touch_log {
            eprintln!(
                "touch @{:>4} {:?}: {} centers, +{} spawned, -{} pruned{}",
                e.iteration,
                e.stage,
                e.centers.len(),
                e.spawned,
                e.pruned,
                if e.skipped { " (no-op)" } else { "" }
            );
        }
        if let Some(last) = state.log.last() {
            eprintln!(
                "iteration {}: CD {:.3} mm, F {:.2} %, JSD {:.4}, {} primitives ({} touch)",
                last.iteration,
                last.cd_mm,
                last.fscore_pct,
                last.jsd,
                state.gaussians.len(),
                state.touch_count()
            );
        }
        let t = &state.times;
        eprintln!(
            "time: init {:.2?}, visual {:.2?}, touch {:.2?}, metrics {:.2?}",
            t.init, t.visual, t.touch, t.metrics
        );
        Ok(())
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
