use std::path::Path;

use serde::Deserialize;

use super::CaptionError;
use crate::level::Level;

pub const DEFAULT_PROMPTS: &str = include_str!("default_prompts.toml");

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct TurnList {
    turns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineStages {
    pub rectify: String,
    pub summarize: String,
    pub rephrase: String,
    pub reminder: String,
}

/// The full set of prompt scripts, as loaded from a prompt file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptBook {
    pub version: String,
    object: TurnList,
    spatial: TurnList,
    pub refine: RefineStages,
}

/// Captioner turns for one level, with the target class filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptScript {
    pub level: Level,
    pub turns: Vec<String>,
}

impl Default for PromptBook {
    fn default() -> Self {
        Self::parse(DEFAULT_PROMPTS).expect("shipped prompt file is valid")
    }
}

impl PromptBook {
    pub fn parse(text: &str) -> Result<Self, CaptionError> {
        let book: PromptBook = toml::from_str(text).map_err(|e| CaptionError::Prompts(e.to_string()))?;
        if book.version.trim().is_empty() {
            return Err(CaptionError::Prompts("version must be non-empty".into()));
        }
        for (name, list) in [("object", &book.object), ("spatial", &book.spatial)] {
            if list.turns.is_empty() || list.turns.iter().any(|t| t.trim().is_empty()) {
                return Err(CaptionError::Prompts(format!("[{name}] turns must be non-empty")));
            }
        }
        if book.object.turns == book.spatial.turns {
            return Err(CaptionError::Prompts("object and spatial scripts must differ".into()));
        }
        Ok(book)
    }

    pub fn load(path: &Path) -> Result<Self, CaptionError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CaptionError::Prompts(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn build_prompt(&self, level: Level, target_class: &str) -> PromptScript {
        let source = match level {
            Level::Object => &self.object,
            Level::Local | Level::Scene => &self.spatial,
        };
        PromptScript {
            level,
            turns: source.turns.iter().map(|t| fill(t, target_class, "", "")).collect(),
        }
    }
}

pub(crate) fn fill(template: &str, class: &str, captions: &str, text: &str) -> String {
    template
        .replace("{class}", class)
        .replace("{captions}", captions)
        .replace("{text}", text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn object_script_differs_from_spatial() {
        let book = PromptBook::default();
        let object = book.build_prompt(Level::Object, "table");
        let local = book.build_prompt(Level::Local, "table");
        let scene = book.build_prompt(Level::Scene, "table");
        assert_ne!(object.turns, local.turns);
        assert_eq!(local.turns, scene.turns);
        assert!(object.turns.iter().any(|t| t.contains("color")));
        assert!(object.turns.iter().all(|t| !t.contains("relative to")));
        assert!(local.turns.iter().all(|t| t.contains("table")));
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(PromptBook::parse("version = \"x\""), Err(CaptionError::Prompts(_))));
        let empty_turns = DEFAULT_PROMPTS.replacen("turns = [", "turns = [] \nold = [", 1);
        assert!(PromptBook::parse(&empty_turns).is_err());
    }
}
