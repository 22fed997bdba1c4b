//! Pipeline configuration: TOML file, environment overrides and hashing.

use std::path::{Path, PathBuf};

use groundaug_core::captioning::TemplateConfig;
use groundaug_core::client::{Endpoint, RetryPolicy};
use groundaug_core::insertion::InsertionConfig;
use groundaug_core::relations::PairwiseOptions;
use groundaug_core::rendering::RenderConfig;
use groundaug_lsad::DecoderConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Service prefixes read from the environment as `<PREFIX>_URL` and
/// `<PREFIX>_API_KEY`.
pub const SERVICE_PREFIXES: [&str; 3] = ["SCORER", "CAPTIONER", "REFINER"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unsupported schema_version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("{key}: {message}")]
    Range { key: String, message: String },
    #[error("{key}: path {path} does not exist")]
    MissingPath { key: String, path: PathBuf },
}

fn range(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Range { key: key.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory of `<id>.ply` + `<id>.objects.jsonl` scenes.
    pub scenes: Option<PathBuf>,
    /// Source of insertable objects; defaults to the scenes themselves.
    pub object_bank: Option<PathBuf>,
    pub out: PathBuf,
    /// Prompt file replacing the bundled prompts.
    pub prompts: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { scenes: None, object_bank: None, out: PathBuf::from("out"), prompts: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub insertions_per_scene: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { insertions_per_scene: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptioningConfig {
    /// Stub scorer and template captions; no network access.
    pub offline: bool,
    /// Records kept per (scene, level) by the training export.
    pub samples_per_scene_level: usize,
    pub template: TemplateConfig,
}

impl Default for CaptioningConfig {
    fn default() -> Self {
        Self { offline: false, samples_per_scene_level: 3, template: TemplateConfig::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceEndpoint {
    pub url: Option<String>,
    pub api_key: Option<String>,
}

impl ServiceEndpoint {
    pub fn endpoint(&self) -> Option<Endpoint> {
        self.url.clone().map(|url| Endpoint { url, api_key: self.api_key.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServicesConfig {
    pub scorer: ServiceEndpoint,
    pub captioner: ServiceEndpoint,
    pub refiner: ServiceEndpoint,
    pub timeout_ms: u64,
    /// Concurrent scoring requests per scene.
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for ServicesConfig {
    fn default() -> Self {
        Self {
            scorer: ServiceEndpoint::default(),
            captioner: ServiceEndpoint::default(),
            refiner: ServiceEndpoint::default(),
            timeout_ms: 60_000,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }
}

impl ServicesConfig {
    fn by_prefix(&mut self, prefix: &str) -> Option<&mut ServiceEndpoint> {
        match prefix {
            "SCORER" => Some(&mut self.scorer),
            "CAPTIONER" => Some(&mut self.captioner),
            "REFINER" => Some(&mut self.refiner),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub paths: PathsConfig,
    pub augment: AugmentConfig,
    pub insertion: InsertionConfig,
    pub rendering: RenderConfig,
    pub captioning: CaptioningConfig,
    pub services: ServicesConfig,
    pub relations: PairwiseOptions,
    pub decoder: DecoderConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            paths: PathsConfig::default(),
            augment: AugmentConfig::default(),
            insertion: InsertionConfig::default(),
            rendering: RenderConfig::default(),
            captioning: CaptioningConfig::default(),
            services: ServicesConfig::default(),
            relations: PairwiseOptions::default(),
            decoder: DecoderConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion { found: cfg.schema_version, expected: CONFIG_SCHEMA_VERSION });
        }
        Ok(cfg)
    }

    /// Replaces endpoint and credential fields from `<PREFIX>_URL` and
    /// `<PREFIX>_API_KEY`. Nothing else is read from the environment.
    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) {
        let get = |key: String| env(&key).filter(|v| !v.trim().is_empty());
        for prefix in SERVICE_PREFIXES {
            let svc = self.services.by_prefix(prefix).expect("known prefix");
            if let Some(url) = get(format!("{prefix}_URL")) {
                svc.url = Some(url);
            }
            if let Some(key) = get(format!("{prefix}_API_KEY")) {
                svc.api_key = Some(key);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.augment.insertions_per_scene == 0 {
            return Err(range("augment.insertions_per_scene", "must be at least 1"));
        }
        if self.insertion.max_attempts == 0 {
            return Err(range("insertion.max_attempts", "must be at least 1"));
        }
        self.insertion.validate().map_err(|e| range("insertion", e.to_string()))?;
        if self.rendering.n_azimuth == 0 {
            return Err(range("rendering.n_azimuth", "must be at least 1"));
        }
        if self.rendering.top_m == 0 {
            return Err(range("rendering.top_m", "must be at least 1"));
        }
        self.rendering.validate().map_err(|e| range("rendering", e.to_string()))?;
        if self.captioning.samples_per_scene_level == 0 {
            return Err(range("captioning.samples_per_scene_level", "must be at least 1"));
        }
        let t = &self.captioning.template;
        if !(0.0..0.5).contains(&t.corner_band) {
            return Err(range("captioning.template.corner_band", "must lie in [0, 0.5)"));
        }
        if !(0.0 <= t.middle_low && t.middle_low < t.middle_high && t.middle_high <= 1.0) {
            return Err(range("captioning.template.middle_low", "middle band must satisfy 0 <= low < high <= 1"));
        }
        if self.services.timeout_ms == 0 {
            return Err(range("services.timeout_ms", "must be positive"));
        }
        if self.services.max_in_flight == 0 {
            return Err(range("services.max_in_flight", "must be at least 1"));
        }
        self.decoder.validate().map_err(|e| range("decoder", e.to_string()))?;
        for (key, path) in [
            ("paths.scenes", &self.paths.scenes),
            ("paths.object_bank", &self.paths.object_bank),
            ("paths.prompts", &self.paths.prompts),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(ConfigError::MissingPath { key: key.into(), path: p.clone() });
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over the resolved configuration, excluding credentials and
    /// the output directory.
    pub fn hash(&self) -> String {
        let mut scrubbed = self.clone();
        for svc in [&mut scrubbed.services.scorer, &mut scrubbed.services.captioner, &mut scrubbed.services.refiner] {
            svc.api_key = None;
        }
        scrubbed.paths.out = PathBuf::new();
        let bytes = serde_json::to_vec(&scrubbed).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads and validates a config file (or the defaults when `path` is
/// `None`), then applies environment overrides.
pub fn load_config(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.to_path_buf(), source })?;
            PipelineConfig::parse(&text, p)?
        }
        None => PipelineConfig::default(),
    };
    cfg.apply_env(env);
    cfg.validate()?;
    Ok(cfg)
}

/// Environment lookup backed by the process environment.
pub fn process_env(key: &str) -> Option<String> {
    std::env::var(key).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    fn parse(text: &str) -> Result<PipelineConfig, ConfigError> {
        let cfg = PipelineConfig::parse(text, Path::new("test.toml"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.insertion.max_attempts, 1000);
        assert_eq!(cfg.rendering.top_m, 3);
        assert_eq!(cfg.rendering.n_azimuth, 8);
        assert_eq!(cfg.captioning.samples_per_scene_level, 3);
        assert_eq!(cfg.augment.insertions_per_scene, 10);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(parse("colour = 1"), Err(ConfigError::Parse { .. })));
        assert!(matches!(parse("[insertion]\nmax_attempt = 5"), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn zero_attempts_names_the_key() {
        let err = parse("[insertion]\nmax_attempts = 0").unwrap_err();
        assert!(err.to_string().contains("insertion.max_attempts"), "{err}");
    }

    #[test]
    fn range_errors_name_their_section() {
        let err = parse("[rendering]\nfill = 2.0").unwrap_err();
        assert!(err.to_string().starts_with("rendering:"), "{err}");
        let err = parse("[decoder]\nheads = 7").unwrap_err();
        assert!(err.to_string().starts_with("decoder:"), "{err}");
    }

    #[test]
    fn wrong_schema_version() {
        assert!(matches!(parse("schema_version = 2"), Err(ConfigError::SchemaVersion { found: 2, .. })));
    }

    #[test]
    fn missing_paths_are_reported() {
        let err = parse("[paths]\nscenes = \"/definitely/not/here\"").unwrap_err();
        assert!(matches!(err, ConfigError::MissingPath { ref key, .. } if key == "paths.scenes"));
    }

    #[test]
    fn env_overrides_endpoints_only() {
        let mut cfg = parse("seed = 4\n[services.captioner]\nurl = \"http://file\"").unwrap();
        let env: HashMap<&str, &str> =
            [("CAPTIONER_URL", "http://env"), ("SCORER_API_KEY", "secret"), ("SEED", "9")].into_iter().collect();
        cfg.apply_env(|k| env.get(k).map(|v| v.to_string()));
        assert_eq!(cfg.services.captioner.url.as_deref(), Some("http://env"));
        assert_eq!(cfg.services.scorer.api_key.as_deref(), Some("secret"));
        assert_eq!(cfg.seed, 4);
    }

    #[test]
    fn hash_ignores_credentials_and_output_dir() {
        let base = load_config(None, no_env).unwrap();
        let mut keyed = base.clone();
        keyed.services.refiner.api_key = Some("k".into());
        keyed.paths.out = PathBuf::from("elsewhere");
        assert_eq!(base.hash(), keyed.hash());
        let mut seeded = base.clone();
        seeded.seed = 1;
        assert_ne!(base.hash(), seeded.hash());
        assert_eq!(base.hash().len(), 64);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 11\n[augment]\ninsertions_per_scene = 2\n").unwrap();
        let cfg = load_config(Some(&path), no_env).unwrap();
        assert_eq!((cfg.seed, cfg.augment.insertions_per_scene), (11, 2));
        assert!(matches!(load_config(Some(&dir.path().join("none.toml")), no_env), Err(ConfigError::Io { .. })));
    }
}
