//! Single-stage operations behind the `render`, `caption` and `relations`
//! subcommands.

use std::path::{Path, PathBuf};

use groundaug_core::captioning::{object_template_caption, refine, run_captioner, Caption, Captioner, Refiner};
use groundaug_core::level::Level;
use groundaug_core::relations::{
    global_relations, object_centers, pairwise_relations, GlobalRelations, PairwiseOptions, PairwiseRelations,
};
use groundaug_core::rendering::{render_views, select_top_m, write_snapshot, ScoredSnapshot, Scorer, StubScorer};
use groundaug_core::scene::Scene;
use groundaug_core::tensor_io::save_tensor;

use crate::config::PipelineConfig;
use crate::pipeline::{load_prompts, load_scenes, PipelineError, Services};
use crate::seeds::derive_seed;

pub fn find_scene(cfg: &PipelineConfig, scene_id: &str) -> Result<Scene, PipelineError> {
    load_scenes(cfg)?
        .into_iter()
        .find(|s| s.id == scene_id)
        .ok_or_else(|| PipelineError::UnknownScene(scene_id.to_string()))
}

fn services(cfg: &PipelineConfig) -> Result<Option<Services>, PipelineError> {
    if cfg.captioning.offline {
        Ok(None)
    } else {
        Services::connect(&cfg.services).map(Some)
    }
}

fn label_of(scene: &Scene, object_id: u32) -> Result<String, PipelineError> {
    scene
        .object(object_id)
        .map(|o| o.label.clone())
        .ok_or_else(|| PipelineError::UnknownObject { scene: scene.id.clone(), object: object_id })
}

fn select(
    cfg: &PipelineConfig,
    scene: &Scene,
    object_id: u32,
    level: Level,
    services: Option<&Services>,
) -> Result<Vec<ScoredSnapshot>, PipelineError> {
    let label = label_of(scene, object_id)?;
    let views = render_views(scene, object_id, level, &cfg.rendering)?;
    let stub = StubScorer::new(scene);
    let scorer: &dyn Scorer = match services {
        Some(s) => &s.scorer,
        None => &stub,
    };
    Ok(select_top_m(views, &label, scorer, cfg.rendering.top_m, cfg.services.max_in_flight)?)
}

/// Renders every planned view of an object, keeps the best `top_m` and
/// writes them to `out_dir`.
pub fn render_object(
    cfg: &PipelineConfig,
    scene: &Scene,
    object_id: u32,
    level: Level,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    let services = services(cfg)?;
    let selected = select(cfg, scene, object_id, level, services.as_ref())?;
    Ok(selected.iter().map(|s| write_snapshot(out_dir, s)).collect::<Result<_, _>>()?)
}

pub fn scene_relations(scene: &Scene, opts: PairwiseOptions) -> Result<(GlobalRelations, PairwiseRelations), PipelineError> {
    let centers = object_centers(scene);
    Ok((global_relations(&centers, &scene.aabb())?, pairwise_relations(&centers, opts)))
}

/// Caption for an existing object: the template caption offline, the
/// refined service caption otherwise (template on service failure).
pub fn caption_object(cfg: &PipelineConfig, scene: &Scene, object_id: u32, level: Level) -> Result<Caption, PipelineError> {
    let label = label_of(scene, object_id)?;
    let (global, pairwise) = scene_relations(scene, PairwiseOptions { log_distance: false })?;
    let volume = scene.object(object_id).map(|o| o.bbox.to_axis_box().volume()).unwrap_or_default();
    let seed = derive_seed(derive_seed(cfg.seed, &scene.id), &format!("object{object_id}:{level}"));
    let template =
        object_template_caption(scene, object_id, volume, &global, &pairwise, level, &cfg.captioning.template, seed)?;
    let Some(services) = services(cfg)? else {
        return Ok(template);
    };
    let selected = select(cfg, scene, object_id, level, Some(&services))?;
    let book = load_prompts(cfg)?;
    let retry = &cfg.services.retry;
    let captioner: &dyn Captioner = &services.captioner;
    let refiner: &dyn Refiner = &services.refiner;
    match run_captioner(&selected, &book.build_prompt(level, &label), captioner, retry) {
        Ok(raws) => Ok(refine(&raws, &label, level, refiner, &book, retry, &template)?),
        Err(e) => {
            log::warn!("captioner failed ({e}); using template caption");
            Ok(template)
        }
    }
}

/// Writes `<scene>.global.gatn` (K x 3) and `<scene>.pairwise.gatn`
/// (K x K x 5) into `out_dir`.
pub fn write_relations(
    out_dir: &Path,
    scene_id: &str,
    global: &GlobalRelations,
    pairwise: &PairwiseRelations,
) -> Result<[PathBuf; 2], PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(crate::pipeline::io_err(out_dir))?;
    let g = out_dir.join(format!("{scene_id}.global.gatn"));
    let p = out_dir.join(format!("{scene_id}.pairwise.gatn"));
    save_tensor(&g, &global.values.clone().into_dyn())?;
    save_tensor(&p, &pairwise.values.clone().into_dyn())?;
    Ok([g, p])
}
