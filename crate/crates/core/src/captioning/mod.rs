//! Level-specific captioning: prompt scripts, captioner and refiner
//! orchestration, template fallback and text-3D pair records.

pub mod clients;
pub mod pairs;
pub mod prompts;
pub mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientError, RetryPolicy};
use crate::level::Level;
use crate::rendering::{snapshot_stem, ScoredSnapshot};

pub use clients::{Captioner, EchoCaptioner, HttpCaptioner, HttpRefiner, Refiner, ScriptedRefiner, Turn};
pub use pairs::{emit_pairs, read_manifest, sample_training_pairs, ManifestWriter, PairRecord, Provenance};
pub use prompts::{PromptBook, PromptScript};
pub use template::{object_template_caption, template_caption, TemplateConfig};

#[derive(Debug, Error)]
pub enum CaptionError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid prompt file: {0}")]
    Prompts(String),
    #[error("captioner failed on snapshot {snapshot}: {source}")]
    Captioner {
        snapshot: String,
        #[source]
        source: ClientError,
    },
    #[error("could not encode snapshot: {0}")]
    Encode(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionSource {
    Service,
    Template,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Caption {
    pub text: String,
    pub level: Level,
    pub source: CaptionSource,
    pub word_count: usize,
}

impl Caption {
    pub fn new(text: impl Into<String>, level: Level, source: CaptionSource) -> Result<Self, CaptionError> {
        let text = text.into().trim().to_string();
        if text.is_empty() {
            return Err(CaptionError::Precondition("caption text is empty".into()));
        }
        let word_count = text.split_whitespace().count();
        Ok(Self { text, level, source, word_count })
    }
}

/// Final captioner answer for one snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCaption {
    pub snapshot: String,
    pub text: String,
}

/// Runs the script turns against each snapshot, carrying the conversation
/// forward. The raw caption is the answer to the last turn.
pub fn run_captioner(
    snapshots: &[ScoredSnapshot],
    script: &PromptScript,
    client: &dyn Captioner,
    retry: &RetryPolicy,
) -> Result<Vec<RawCaption>, CaptionError> {
    if snapshots.is_empty() {
        return Err(CaptionError::Precondition("no snapshots to caption".into()));
    }
    if script.turns.is_empty() {
        return Err(CaptionError::Precondition("prompt script has no turns".into()));
    }
    snapshots
        .iter()
        .map(|scored| {
            let name = snapshot_stem(&scored.snapshot.pose);
            let png = scored.snapshot.to_png().map_err(|e| CaptionError::Encode(e.to_string()))?;
            let mut history: Vec<Turn> = Vec::with_capacity(script.turns.len());
            for question in &script.turns {
                let answer = retry
                    .run(|| nonblank(client.ask(&png, &history, question)?))
                    .map_err(|source| CaptionError::Captioner { snapshot: name.clone(), source })?;
                history.push(Turn { question: question.clone(), answer });
            }
            let text = history.pop().map(|t| t.answer).unwrap_or_default();
            Ok(RawCaption { snapshot: name, text })
        })
        .collect()
}

fn nonblank(answer: String) -> Result<String, ClientError> {
    let trimmed = answer.trim();
    if trimmed.is_empty() {
        Err(ClientError::EmptyResponse)
    } else {
        Ok(trimmed.to_string())
    }
}

/// Case-insensitive whole-word match of `class` in `text`; a plural `s` or
/// `es` suffix is accepted.
pub fn contains_class_token(text: &str, class: &str) -> bool {
    let text = text.to_lowercase();
    let class = class.trim().to_lowercase();
    if class.is_empty() {
        return false;
    }
    let is_word = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric());
    text.match_indices(&class).any(|(i, _)| {
        let before = text[..i].chars().next_back();
        let rest = &text[i + class.len()..];
        let rest = rest
            .strip_prefix("es")
            .filter(|r| !is_word(r.chars().next()))
            .or_else(|| rest.strip_prefix('s').filter(|r| !is_word(r.chars().next())))
            .unwrap_or(rest);
        !is_word(before) && !is_word(rest.chars().next())
    })
}

/// Rectify, summarize and rephrase the raw captions into one caption that
/// names `target_class`. A failed check gets one re-ask; after that, or on
/// any refiner failure, `fallback` is returned.
pub fn refine(
    raws: &[RawCaption],
    target_class: &str,
    level: Level,
    client: &dyn Refiner,
    book: &PromptBook,
    retry: &RetryPolicy,
    fallback: &Caption,
) -> Result<Caption, CaptionError> {
    if raws.is_empty() {
        return Err(CaptionError::Precondition("no raw captions to refine".into()));
    }
    let call = |prompt: String| retry.run(|| nonblank(client.complete(&prompt)?));
    let stages = &book.refine;
    let numbered: Vec<String> = raws.iter().enumerate().map(|(i, r)| format!("{}. {}", i + 1, r.text)).collect();
    let numbered = numbered.join("\n");

    let attempt = || -> Result<Option<String>, ClientError> {
        let rectified = call(prompts::fill(&stages.rectify, target_class, &numbered, ""))?;
        let summary = call(prompts::fill(&stages.summarize, target_class, &numbered, &rectified))?;
        let rephrase = prompts::fill(&stages.rephrase, target_class, &numbered, &summary);
        let first = call(rephrase.clone())?;
        if contains_class_token(&first, target_class) {
            return Ok(Some(first));
        }
        let reminder = prompts::fill(&stages.reminder, target_class, "", "");
        let second = call(format!("{rephrase}\n{reminder}"))?;
        Ok(contains_class_token(&second, target_class).then_some(second))
    };

    match attempt() {
        Ok(Some(text)) => Caption::new(text, level, CaptionSource::Service),
        Ok(None) => {
            log::warn!("refined caption never named '{target_class}'; using template caption");
            Ok(fallback.clone())
        }
        Err(e) => {
            log::warn!("refiner failed ({e}); using template caption");
            Ok(fallback.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rendering::{CameraPose, Intrinsics, Snapshot};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn scored(azimuth_deg: f64) -> ScoredSnapshot {
        ScoredSnapshot {
            snapshot: Snapshot {
                width: 2,
                height: 2,
                pixels: vec![[10, 20, 30]; 4],
                depth: vec![1.0; 4],
                pose: CameraPose {
                    position: [1.0, 0.0, 0.0],
                    look_at: [0.0; 3],
                    up: [0.0, 0.0, 1.0],
                    elevation_deg: 0.0,
                    azimuth_deg,
                    level: Level::Local,
                    target_id: 0,
                },
                intrinsics: Intrinsics { image_width: 2, image_height: 2, vertical_fov: 1.0 },
                splat_radius: 1.0,
                target_id: 0,
            },
            score: 0.5,
        }
    }

    fn fallback() -> Caption {
        Caption::new("The table is in the middle.", Level::Local, CaptionSource::Template).unwrap()
    }

    fn raws() -> Vec<RawCaption> {
        vec![RawCaption { snapshot: "s".into(), text: "a brown table".into() }]
    }

    #[test]
    fn echo_captioner_one_raw_per_snapshot() {
        let book = PromptBook::default();
        let script = book.build_prompt(Level::Local, "table");
        let client = EchoCaptioner { reply: "a brown table".into() };
        let snaps = vec![scored(0.0), scored(45.0), scored(90.0)];
        let out = run_captioner(&snaps, &script, &client, &RetryPolicy::immediate(0)).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|r| r.text == "a brown table"));
        assert_eq!(out[1].snapshot, "local_e000_a045");
        assert!(matches!(
            run_captioner(&[], &script, &client, &RetryPolicy::immediate(0)),
            Err(CaptionError::Precondition(_))
        ));
    }

    struct Blank(AtomicUsize);

    impl Captioner for Blank {
        fn id(&self) -> &str {
            "blank"
        }
        fn ask(&self, _: &[u8], _: &[Turn], _: &str) -> Result<String, ClientError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok("   ".into())
        }
    }

    #[test]
    fn blank_answers_fail_after_retries() {
        let client = Blank(AtomicUsize::new(0));
        let script = PromptBook::default().build_prompt(Level::Object, "chair");
        let err = run_captioner(&[scored(0.0)], &script, &client, &RetryPolicy::immediate(2)).unwrap_err();
        assert!(matches!(err, CaptionError::Captioner { source: ClientError::Exhausted { attempts: 3, .. }, .. }));
        assert_eq!(client.0.load(Ordering::SeqCst), 3);
    }

    struct History;

    impl Captioner for History {
        fn id(&self) -> &str {
            "history"
        }
        fn ask(&self, _: &[u8], history: &[Turn], _: &str) -> Result<String, ClientError> {
            Ok(format!("turn {}", history.len()))
        }
    }

    #[test]
    fn raw_caption_is_last_answer() {
        let script = PromptBook::default().build_prompt(Level::Scene, "bed");
        let out = run_captioner(&[scored(0.0)], &script, &History, &RetryPolicy::immediate(0)).unwrap();
        assert_eq!(out[0].text, format!("turn {}", script.turns.len() - 1));
    }

    #[test]
    fn refine_accepts_valid_caption() {
        let client = ScriptedRefiner::constant("The brown table is near the sofa.");
        let c = refine(&raws(), "table", Level::Local, &client, &PromptBook::default(), &RetryPolicy::immediate(0), &fallback())
            .unwrap();
        assert_eq!(c.source, CaptionSource::Service);
        assert_eq!(c.text, "The brown table is near the sofa.");
        assert_eq!(c.word_count, 7);
        assert_eq!(client.prompts().len(), 3);
    }

    #[test]
    fn refine_reasks_once_then_falls_back() {
        let client = ScriptedRefiner::constant("A wooden object near the sofa.");
        let c = refine(&raws(), "table", Level::Local, &client, &PromptBook::default(), &RetryPolicy::immediate(0), &fallback())
            .unwrap();
        assert_eq!(c, fallback());
        let prompts = client.prompts();
        assert_eq!(prompts.len(), 4);
        assert!(prompts[3].contains("must contain the word \"table\""));
    }

    #[test]
    fn refine_reask_can_recover() {
        let replies = vec![Ok("x".into()), Ok("y".into()), Ok("A wooden thing.".into()), Ok("A wooden table.".into())];
        let client = ScriptedRefiner::new(replies, Ok("unused".into()));
        let c = refine(&raws(), "table", Level::Object, &client, &PromptBook::default(), &RetryPolicy::immediate(0), &fallback())
            .unwrap();
        assert_eq!((c.text.as_str(), c.source), ("A wooden table.", CaptionSource::Service));
    }

    #[test]
    fn refine_unreachable_falls_back() {
        let c = refine(
            &raws(),
            "table",
            Level::Local,
            &ScriptedRefiner::unreachable(),
            &PromptBook::default(),
            &RetryPolicy::immediate(1),
            &fallback(),
        )
        .unwrap();
        assert_eq!(c.source, CaptionSource::Template);
        let empty = refine(&[], "table", Level::Local, &ScriptedRefiner::unreachable(), &PromptBook::default(), &RetryPolicy::immediate(0), &fallback());
        assert!(matches!(empty, Err(CaptionError::Precondition(_))));
    }

    #[test]
    fn class_token_matching() {
        assert!(contains_class_token("The Table is here.", "table"));
        assert!(contains_class_token("two tables", "table"));
        assert!(contains_class_token("a coffee table, brown", "coffee table"));
        assert!(!contains_class_token("a tablet on the desk", "table"));
        assert!(!contains_class_token("a nightstand", "stand"));
        assert!(contains_class_token("benches", "bench"));
    }

    #[test]
    fn caption_word_count() {
        let c = Caption::new("  a  b\tc\n", Level::Object, CaptionSource::Template).unwrap();
        assert_eq!((c.text.as_str(), c.word_count), ("a  b\tc", 3));
        assert!(Caption::new(" ", Level::Object, CaptionSource::Template).is_err());
    }
}
