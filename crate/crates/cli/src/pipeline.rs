//! End-to-end augmentation runs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use groundaug_core::captioning::{
    emit_pairs, pairs::LevelCaption, refine, run_captioner, sample_training_pairs, template_caption, Caption,
    CaptionError, CaptionSource, Captioner, HttpCaptioner, HttpRefiner, ManifestWriter, PairRecord, PromptBook,
    Provenance, Refiner,
};
use groundaug_core::client::{ClientError, Endpoint};
use groundaug_core::insertion::{insert_object_traced, BankObject, InsertionError, InsertionLog, InsertionResult};
use groundaug_core::level::Level;
use groundaug_core::relations::{global_relations, object_centers, pairwise_relations, PairwiseOptions, RelationError};
use groundaug_core::rendering::{render_views, select_top_m, write_snapshot, HttpScorer, RenderError, Scorer, StubScorer};
use groundaug_core::scene::{load_scene_dir, save_scene, Scene, SceneError};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig, ServiceEndpoint, ServicesConfig};
use crate::seeds::derive_seed;

pub const MANIFEST_FILE: &str = "pairs.jsonl";
pub const TRAIN_FILE: &str = "train_pairs.jsonl";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no scene directory given (set paths.scenes or pass --scenes)")]
    NoSceneDir,
    #[error("no scenes found in {0}")]
    NoScenes(PathBuf),
    #[error("{0}_URL is not set; configure the endpoint or run offline")]
    MissingEndpoint(&'static str),
    #[error("unknown scene `{0}`")]
    UnknownScene(String),
    #[error("scene {scene} has no object {object}")]
    UnknownObject { scene: String, object: u32 },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Insertion(#[from] InsertionError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Caption(#[from] CaptionError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Tensor(#[from] groundaug_core::tensor_io::TensorIoError),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("worker pool: {0}")]
    Pool(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; 0 uses one per core.
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { jobs: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneReport {
    pub scene_id: String,
    pub seed: u64,
    pub insertions_attempted: usize,
    pub insertions_succeeded: usize,
    pub placement_failures: usize,
    /// Placement attempts summed over all insertions.
    pub placement_attempts: usize,
    pub snapshots_rendered: usize,
    pub snapshots_selected: usize,
    pub captions_service: usize,
    pub captions_template: usize,
    pub pairs_emitted: usize,
    pub wall_ms: u64,
    pub error: Option<String>,
}

impl SceneReport {
    pub fn captions_accepted(&self) -> usize {
        self.captions_service + self.captions_template
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTotals {
    pub scenes: usize,
    pub scenes_failed: usize,
    pub insertions_attempted: usize,
    pub insertions_succeeded: usize,
    pub placement_failures: usize,
    pub captions_service: usize,
    pub captions_template: usize,
    pub pairs_emitted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config_hash: String,
    pub offline: bool,
    pub manifest: PathBuf,
    pub training_export: PathBuf,
    pub training_pairs: usize,
    pub scenes: Vec<SceneReport>,
    pub totals: RunTotals,
    pub wall_ms: u64,
}

impl RunReport {
    /// Every accepted caption produced exactly one record.
    pub fn is_consistent(&self) -> bool {
        self.scenes.iter().all(|s| s.error.is_some() || s.pairs_emitted == s.captions_accepted())
            && self.totals.pairs_emitted == self.scenes.iter().map(|s| s.pairs_emitted).sum::<usize>()
    }

    fn totals_of(scenes: &[SceneReport]) -> RunTotals {
        let mut t = RunTotals { scenes: scenes.len(), ..RunTotals::default() };
        for s in scenes {
            t.scenes_failed += usize::from(s.error.is_some());
            t.insertions_attempted += s.insertions_attempted;
            t.insertions_succeeded += s.insertions_succeeded;
            t.placement_failures += s.placement_failures;
            t.captions_service += s.captions_service;
            t.captions_template += s.captions_template;
            t.pairs_emitted += s.pairs_emitted;
        }
        t
    }
}

/// Remote model clients used outside offline mode.
pub struct Services {
    pub scorer: HttpScorer,
    pub captioner: HttpCaptioner,
    pub refiner: HttpRefiner,
}

fn required(svc: &ServiceEndpoint, prefix: &'static str) -> Result<Endpoint, PipelineError> {
    svc.endpoint().ok_or(PipelineError::MissingEndpoint(prefix))
}

impl Services {
    pub fn connect(cfg: &ServicesConfig) -> Result<Self, PipelineError> {
        let timeout = Duration::from_millis(cfg.timeout_ms);
        Ok(Self {
            scorer: HttpScorer::new(required(&cfg.scorer, "SCORER")?, cfg.retry.clone(), timeout)?,
            captioner: HttpCaptioner::new(required(&cfg.captioner, "CAPTIONER")?, timeout)?,
            refiner: HttpRefiner::new(required(&cfg.refiner, "REFINER")?, timeout)?,
        })
    }
}

/// Shared, read-only state of one run.
pub(crate) struct RunContext<'a> {
    pub cfg: &'a PipelineConfig,
    pub book: PromptBook,
    pub config_hash: String,
    pub services: Option<Services>,
    pub bank: Vec<BankObject>,
}

impl<'a> RunContext<'a> {
    pub fn new(cfg: &'a PipelineConfig, bank: Vec<BankObject>) -> Result<Self, PipelineError> {
        let book = load_prompts(cfg)?;
        let services = if cfg.captioning.offline { None } else { Some(Services::connect(&cfg.services)?) };
        Ok(Self { cfg, book, config_hash: cfg.hash(), services, bank })
    }

    fn provenance(&self, scorer_id: &str) -> Provenance {
        let (captioner, refiner) = match &self.services {
            Some(s) => (s.captioner.id().to_string(), s.refiner.id().to_string()),
            None => ("template".to_string(), "template".to_string()),
        };
        Provenance {
            seed: self.cfg.seed,
            scorer: scorer_id.to_string(),
            captioner,
            refiner,
            prompt_version: self.book.version.clone(),
            config_hash: self.config_hash.clone(),
        }
    }
}

pub fn load_prompts(cfg: &PipelineConfig) -> Result<PromptBook, PipelineError> {
    Ok(match &cfg.paths.prompts {
        Some(p) => PromptBook::load(p)?,
        None => PromptBook::default(),
    })
}

pub fn load_scenes(cfg: &PipelineConfig) -> Result<Vec<Scene>, PipelineError> {
    let dir = cfg.paths.scenes.as_ref().ok_or(PipelineError::NoSceneDir)?;
    let scenes = load_scene_dir(dir)?;
    if scenes.is_empty() {
        return Err(PipelineError::NoScenes(dir.clone()));
    }
    Ok(scenes)
}

/// Insert, render, select, caption and emit pairs for every scene. Scene
/// failures are recorded in the report and do not stop the run; their
/// partial output is dropped from the manifest.
pub fn run_augment(cfg: &PipelineConfig, opts: RunOptions) -> Result<RunReport, PipelineError> {
    let start = Instant::now();
    cfg.validate()?;
    let scenes = load_scenes(cfg)?;
    let bank = match &cfg.paths.object_bank {
        Some(dir) => BankObject::standers_of(&load_scene_dir(dir)?),
        None => BankObject::standers_of(&scenes),
    };
    let ctx = RunContext::new(cfg, bank)?;
    let out = &cfg.paths.out;
    fs::create_dir_all(out).map_err(io_err(out))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))?;
    let results: Vec<(SceneReport, Vec<u8>)> = pool.install(|| scenes.par_iter().map(|s| run_scene(s, &ctx)).collect());

    let manifest = out.join(MANIFEST_FILE);
    let mut file = fs::File::create(&manifest).map_err(io_err(&manifest))?;
    let mut reports = Vec::with_capacity(results.len());
    for (report, bytes) in results {
        file.write_all(&bytes).map_err(io_err(&manifest))?;
        reports.push(report);
    }
    file.flush().map_err(io_err(&manifest))?;
    drop(file);

    let training_export = out.join(TRAIN_FILE);
    let training_pairs = export_training_pairs(&manifest, &training_export, cfg.captioning.samples_per_scene_level, cfg.seed)?;

    let report = RunReport {
        seed: cfg.seed,
        config_hash: ctx.config_hash.clone(),
        offline: cfg.captioning.offline,
        manifest,
        training_export,
        training_pairs,
        totals: RunReport::totals_of(&reports),
        scenes: reports,
        wall_ms: start.elapsed().as_millis() as u64,
    };
    let report_path = out.join(REPORT_FILE);
    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    fs::write(&report_path, json).map_err(io_err(&report_path))?;
    Ok(report)
}

/// Writes `n` sampled records per (scene, level) from `manifest` to `dest`.
pub fn export_training_pairs(manifest: &Path, dest: &Path, n: usize, seed: u64) -> Result<usize, PipelineError> {
    let records = groundaug_core::captioning::read_manifest(manifest)?;
    let sampled = sample_training_pairs(&records, n, seed);
    let file = fs::File::create(dest).map_err(io_err(dest))?;
    let mut writer = ManifestWriter::new(std::io::BufWriter::new(file));
    for r in &sampled {
        writer.append(r)?;
    }
    Ok(sampled.len())
}

fn run_scene(scene: &Scene, ctx: &RunContext) -> (SceneReport, Vec<u8>) {
    let start = Instant::now();
    let mut report = SceneReport {
        scene_id: scene.id.clone(),
        seed: derive_seed(ctx.cfg.seed, &scene.id),
        ..SceneReport::default()
    };
    let mut writer = ManifestWriter::new(Vec::new());
    let outcome = augment_scene(scene, ctx, &mut report, &mut writer);
    report.wall_ms = start.elapsed().as_millis() as u64;
    match outcome {
        Ok(()) => (report, writer.into_inner()),
        Err(e) => {
            log::error!("scene {} skipped: {e}", scene.id);
            report.error = Some(e.to_string());
            report.pairs_emitted = 0;
            (report, Vec::new())
        }
    }
}

fn augment_scene(
    scene: &Scene,
    ctx: &RunContext,
    report: &mut SceneReport,
    writer: &mut ManifestWriter<Vec<u8>>,
) -> Result<(), PipelineError> {
    let cfg = ctx.cfg;
    for i in 0..cfg.augment.insertions_per_scene {
        let aug_id = format!("{}_aug{i:02}", scene.id);
        let seed = derive_seed(report.seed, &aug_id);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        report.insertions_attempted += 1;
        let outcome = insert_object_traced(scene, &ctx.bank, &mut rng, &cfg.insertion)?;
        report.placement_attempts += outcome.attempts;
        let Some(aug) = outcome.result else {
            log::warn!("{aug_id}: no placement after {} attempts", outcome.attempts);
            report.placement_failures += 1;
            continue;
        };
        report.insertions_succeeded += 1;
        let captions = process_insertion(&aug_id, &aug, seed, ctx, report)?;
        let scorer_id = match &ctx.services {
            Some(s) => s.scorer.id().to_string(),
            None => StubScorer::new(&aug.augmented_scene).id().to_string(),
        };
        let records = emit_pairs(&aug_id, &aug, &captions, &ctx.provenance(&scorer_id), writer)?;
        report.pairs_emitted += records.len();
    }
    Ok(())
}

/// Saves the augmented scene, then renders, selects and captions it at
/// every level.
fn process_insertion(
    aug_id: &str,
    aug: &InsertionResult,
    seed: u64,
    ctx: &RunContext,
    report: &mut SceneReport,
) -> Result<Vec<LevelCaption>, PipelineError> {
    let cfg = ctx.cfg;
    let out = &cfg.paths.out;
    let scene_dir = out.join("scenes").join(aug_id);
    save_scene(&aug.augmented_scene, &scene_dir)?;
    let log_path = scene_dir.join("insertion.json");
    let log = serde_json::to_vec_pretty(&InsertionLog::new(aug, aug_id, seed)).expect("log serializes");
    fs::write(&log_path, log).map_err(io_err(&log_path))?;

    let centers = object_centers(&aug.augmented_scene);
    let global = global_relations(&centers, &aug.augmented_scene.aabb())?;
    let pairwise = pairwise_relations(&centers, PairwiseOptions { log_distance: false });
    let label = aug.inserted.label.as_str();
    let stub = StubScorer::new(&aug.augmented_scene);
    let scorer: &dyn Scorer = match &ctx.services {
        Some(s) => &s.scorer,
        None => &stub,
    };

    let mut captions = Vec::with_capacity(Level::ALL.len());
    for level in Level::ALL {
        let views = render_views(&aug.augmented_scene, aug.inserted.id, level, &cfg.rendering)?;
        report.snapshots_rendered += views.len();
        let selected = select_top_m(views, label, scorer, cfg.rendering.top_m, cfg.services.max_in_flight)?;
        report.snapshots_selected += selected.len();
        let snap_dir = out.join("snapshots").join(aug_id);
        let mut snapshot_paths = Vec::with_capacity(selected.len());
        for s in &selected {
            let path = write_snapshot(&snap_dir, s)?;
            let name = path.file_name().expect("snapshot file name").to_string_lossy();
            snapshot_paths.push(format!("snapshots/{aug_id}/{name}"));
        }

        let template = template_caption(aug, &global, &pairwise, level, &cfg.captioning.template, derive_seed(seed, level.as_str()))?;
        let caption = match &ctx.services {
            Some(s) => service_caption(&selected, label, level, s, ctx, &template)?,
            None => template,
        };
        match caption.source {
            CaptionSource::Service => report.captions_service += 1,
            CaptionSource::Template => report.captions_template += 1,
        }
        captions.push(LevelCaption { caption, snapshot_paths });
    }
    Ok(captions)
}

fn service_caption(
    selected: &[groundaug_core::rendering::ScoredSnapshot],
    label: &str,
    level: Level,
    services: &Services,
    ctx: &RunContext,
    fallback: &Caption,
) -> Result<Caption, PipelineError> {
    let retry = &ctx.cfg.services.retry;
    let script = ctx.book.build_prompt(level, label);
    let captioner: &dyn Captioner = &services.captioner;
    let refiner: &dyn Refiner = &services.refiner;
    match run_captioner(selected, &script, captioner, retry) {
        Ok(raws) => Ok(refine(&raws, label, level, refiner, &ctx.book, retry, fallback)?),
        Err(e) => {
            log::warn!("captioner failed ({e}); using template caption");
            Ok(fallback.clone())
        }
    }
}

/// Records of `manifest` in file order.
pub fn read_pairs(manifest: &Path) -> Result<Vec<PairRecord>, PipelineError> {
    Ok(groundaug_core::captioning::read_manifest(manifest)?)
}
