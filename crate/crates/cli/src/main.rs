use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use groundaug::config::{load_config, process_env, PipelineConfig};
use groundaug::pipeline::{export_training_pairs, run_augment, RunOptions, TRAIN_FILE};
use groundaug::stages::{caption_object, find_scene, render_object, scene_relations, write_relations};
use groundaug_core::level::Level;
use groundaug_core::relations::PairwiseOptions;
use groundaug_core::scene::save_scene;
use groundaug_core::scene::synth::{presets, synthesize_test_scene};

#[derive(Parser)]
#[command(name = "groundaug", version, about = "Object-insertion data augmentation for 3D visual grounding")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the stub scorer and template captions.
    #[arg(long, global = true)]
    offline: bool,
    /// Scene directory (overrides paths.scenes).
    #[arg(long, global = true)]
    scenes: Option<PathBuf>,
    /// Output directory (overrides paths.out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct Target {
    #[arg(long)]
    scene: String,
    #[arg(long)]
    object: u32,
    #[arg(long, default_value = "object")]
    level: Level,
}

#[derive(Subcommand)]
enum Command {
    /// Insert, render, caption and emit pairs for every scene.
    Augment,
    /// Render and select the best views of one object.
    Render(Target),
    /// Caption one object.
    Caption(Target),
    /// Sample a training export from a pair manifest.
    Pairs {
        #[arg(long)]
        manifest: PathBuf,
        /// Records per scene and level (overrides the config).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Write the global and pairwise relation tensors of a scene.
    Relations {
        #[arg(long)]
        scene: String,
        #[arg(long)]
        log_distance: bool,
    },
    /// Run the decoder numerics and gradient suite.
    Check {
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Write the synthetic fixture rooms as scene files.
    Fixtures,
}

fn resolve(opts: &GlobalOpts) -> Result<PipelineConfig> {
    let mut cfg = load_config(opts.config.as_deref(), process_env)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if opts.offline {
        cfg.captioning.offline = true;
    }
    if let Some(dir) = &opts.scenes {
        cfg.paths.scenes = Some(dir.clone());
    }
    if let Some(dir) = &opts.out {
        cfg.paths.out = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = resolve(&cli.global)?;
    let out = cfg.paths.out.clone();
    match cli.command {
        Command::Augment => {
            let report = run_augment(&cfg, RunOptions { jobs: cli.global.jobs })?;
            let t = &report.totals;
            println!(
                "{} scenes ({} failed), {}/{} insertions, {} placement failures, {} pairs, {} training pairs",
                t.scenes, t.scenes_failed, t.insertions_succeeded, t.insertions_attempted, t.placement_failures,
                t.pairs_emitted, report.training_pairs
            );
            println!("manifest: {}", report.manifest.display());
            Ok(t.scenes_failed == 0)
        }
        Command::Render(t) => {
            let scene = find_scene(&cfg, &t.scene)?;
            for path in render_object(&cfg, &scene, t.object, t.level, &out.join("snapshots").join(&t.scene))? {
                println!("{}", path.display());
            }
            Ok(true)
        }
        Command::Caption(t) => {
            let scene = find_scene(&cfg, &t.scene)?;
            let caption = caption_object(&cfg, &scene, t.object, t.level)?;
            println!("{}", serde_json::to_string(&caption)?);
            Ok(true)
        }
        Command::Pairs { manifest, n } => {
            let n = n.unwrap_or(cfg.captioning.samples_per_scene_level);
            if n == 0 {
                bail!("--n must be at least 1");
            }
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let dest = out.join(TRAIN_FILE);
            let kept = export_training_pairs(&manifest, &dest, n, cfg.seed)?;
            println!("{kept} records -> {}", dest.display());
            Ok(true)
        }
        Command::Relations { scene, log_distance } => {
            let s = find_scene(&cfg, &scene)?;
            let (g, p) = scene_relations(&s, PairwiseOptions { log_distance })?;
            for path in write_relations(&out.join("relations"), &scene, &g, &p)? {
                println!("{}", path.display());
            }
            Ok(true)
        }
        Command::Check { trials } => {
            let report = groundaug_lsad::check::run_suite(cfg.seed, trials);
            for p in &report.properties {
                let verdict = if p.passed { "ok" } else { "FAIL" };
                println!("{:<36} {:>10.3e} <= {:<8.0e} {verdict} ({} ms)", p.name, p.max_error, p.tolerance, p.millis);
            }
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let path = out.join("check_report.json");
            std::fs::write(&path, serde_json::to_vec_pretty(&report)?)?;
            Ok(report.passed)
        }
        Command::Fixtures => {
            let dir = out.join("fixtures");
            let mut rooms = presets::fixture_rooms();
            rooms.push(presets::mini_scene());
            for (i, room) in rooms.iter().enumerate() {
                let scene = synthesize_test_scene(room, presets::MINI_SCENE_SEED + i as u64)?;
                let paths = save_scene(&scene, &dir)?;
                println!("{}", paths.cloud.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
