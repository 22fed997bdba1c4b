//! Deterministic offline captions built from box volume and spatial relations.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Caption, CaptionError, CaptionSource};
use crate::insertion::InsertionResult;
use crate::level::Level;
use crate::relations::{GlobalRelations, PairwiseRelations};
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    /// Normalized distance from a wall that still counts as a corner.
    pub corner_band: f64,
    pub middle_low: f64,
    pub middle_high: f64,
    /// Center distance in meters below which a neighbor is "next to".
    pub next_to_m: f64,
    pub near_m: f64,
    /// Box volumes in cubic meters for the size adjectives.
    pub small_volume: f64,
    pub large_volume: f64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            corner_band: 0.2,
            middle_low: 0.4,
            middle_high: 0.6,
            next_to_m: 0.75,
            near_m: 2.0,
            small_volume: 0.1,
            large_volume: 1.0,
        }
    }
}

const SMALL: [&str; 2] = ["small", "little"];
const LARGE: [&str; 2] = ["large", "big"];

/// Everything a template sentence depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateFacts<'a> {
    pub class: &'a str,
    pub volume: f64,
    /// Nearest other object and its center distance in meters.
    pub neighbor: Option<(&'a str, f64)>,
    /// Normalized horizontal position in the scene box.
    pub global_xy: [f64; 2],
}

fn article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub fn relation_phrase(distance: f64, cfg: &TemplateConfig) -> &'static str {
    if distance < cfg.next_to_m {
        "next to"
    } else if distance < cfg.near_m {
        "near"
    } else {
        "across the room from"
    }
}

pub fn global_phrase(xy: [f64; 2], cfg: &TemplateConfig) -> String {
    let edge = |v: f64| v <= cfg.corner_band || v >= 1.0 - cfg.corner_band;
    let middle = |v: f64| (cfg.middle_low..=cfg.middle_high).contains(&v);
    if edge(xy[0]) && edge(xy[1]) {
        return "in the corner".into();
    }
    if middle(xy[0]) && middle(xy[1]) {
        return "in the middle".into();
    }
    let sides = [("west", xy[0]), ("east", 1.0 - xy[0]), ("south", xy[1]), ("north", 1.0 - xy[1])];
    let (side, _) = sides
        .iter()
        .fold(sides[0], |best, &s| if s.1 < best.1 { s } else { best });
    format!("near the {side} wall")
}

pub fn template_text(facts: &TemplateFacts, level: Level, cfg: &TemplateConfig, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class = facts.class;
    match level {
        Level::Object => {
            let adjective = if facts.volume < cfg.small_volume {
                SMALL.choose(&mut rng).copied()
            } else if facts.volume > cfg.large_volume {
                LARGE.choose(&mut rng).copied()
            } else {
                None
            };
            let noun = match adjective {
                Some(a) => format!("{a} {class}"),
                None => class.to_string(),
            };
            format!("{} {noun}.", capitalize(article(&noun)))
        }
        Level::Local | Level::Scene => {
            let global = global_phrase(facts.global_xy, cfg);
            let neighbor = facts.neighbor.map(|(other, d)| {
                let other = if other == class { format!("other {other}") } else { other.to_string() };
                (other, d)
            });
            match (neighbor, level) {
                (Some((other, d)), Level::Local) => {
                    format!("The {class} is {} the {other}.", relation_phrase(d, cfg))
                }
                (Some((other, d)), _) => {
                    format!("The {class} is {} the {other}. It is {global}.", relation_phrase(d, cfg))
                }
                (None, _) => format!("The {class} is {global}."),
            }
        }
    }
}

/// Nearest other object by center distance; ties go to the lower index.
pub fn nearest_neighbor(pairwise: &PairwiseRelations, target: usize) -> Option<(usize, f64)> {
    let k = pairwise.values.dim().0;
    (0..k)
        .filter(|&j| j != target)
        .map(|j| (j, pairwise.values[[target, j, 0]]))
        .fold(None, |best: Option<(usize, f64)>, (j, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((j, d)),
        })
}

/// Template caption for the inserted object. Relations must be computed over
/// the augmented scene's objects, in scene order, with raw-meter distances.
pub fn template_caption(
    aug: &InsertionResult,
    global: &GlobalRelations,
    pairwise: &PairwiseRelations,
    level: Level,
    cfg: &TemplateConfig,
    seed: u64,
) -> Result<Caption, CaptionError> {
    let volume = aug.location.volume();
    object_template_caption(&aug.augmented_scene, aug.inserted.id, volume, global, pairwise, level, cfg, seed)
}

/// Template caption for any object of `scene`, with relations laid out as
/// for [`template_caption`].
#[allow(clippy::too_many_arguments)]
pub fn object_template_caption(
    scene: &Scene,
    target_id: u32,
    volume: f64,
    global: &GlobalRelations,
    pairwise: &PairwiseRelations,
    level: Level,
    cfg: &TemplateConfig,
    seed: u64,
) -> Result<Caption, CaptionError> {
    let objects = scene.objects();
    let target = objects
        .iter()
        .position(|o| o.id == target_id)
        .ok_or_else(|| CaptionError::Precondition(format!("object {target_id} not in scene {}", scene.id)))?;
    if global.values.nrows() != objects.len() || pairwise.values.dim().0 != objects.len() {
        return Err(CaptionError::Precondition(format!(
            "relations cover {} objects, scene has {}",
            global.values.nrows(),
            objects.len()
        )));
    }
    let facts = TemplateFacts {
        class: &objects[target].label,
        volume,
        neighbor: nearest_neighbor(pairwise, target).map(|(j, d)| (objects[j].label.as_str(), d)),
        global_xy: [global.values[[target, 0]], global.values[[target, 1]]],
    };
    Caption::new(template_text(&facts, level, cfg, seed), level, CaptionSource::Template)
}
