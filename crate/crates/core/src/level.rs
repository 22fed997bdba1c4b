use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Framing granularity of a rendered view and its description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Object,
    Local,
    Scene,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Object, Level::Local, Level::Scene];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Object => "object",
            Level::Local => "local",
            Level::Scene => "scene",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown level `{0}` (expected object, local or scene)")]
pub struct UnknownLevel(pub String);

impl FromStr for Level {
    type Err = UnknownLevel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "object" => Ok(Level::Object),
            "local" => Ok(Level::Local),
            "scene" => Ok(Level::Scene),
            _ => Err(UnknownLevel(s.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_reject() {
        assert_eq!("Local".parse::<Level>(), Ok(Level::Local));
        assert!("room".parse::<Level>().is_err());
        assert!(serde_json::from_str::<Level>("\"room\"").is_err());
        assert_eq!(serde_json::to_string(&Level::Scene).unwrap(), "\"scene\"");
    }
}
