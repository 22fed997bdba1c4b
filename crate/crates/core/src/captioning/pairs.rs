//! Text-3D pair records and the JSON Lines manifest they are appended to.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Caption, CaptionError, CaptionSource};
use crate::insertion::InsertionResult;
use crate::level::Level;
use crate::scene::AxisBox;

pub const PAIR_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub scorer: String,
    pub captioner: String,
    pub refiner: String,
    pub prompt_version: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub schema_version: u32,
    pub scene_id: String,
    pub aug_id: String,
    pub target_class: String,
    pub target_box: AxisBox,
    pub level: Level,
    pub caption: Caption,
    pub snapshot_paths: Vec<String>,
    pub provenance: Provenance,
}

/// A caption together with the snapshot files it was produced from.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelCaption {
    pub caption: Caption,
    pub snapshot_paths: Vec<String>,
}

/// Serialized appends of one record per line.
pub struct ManifestWriter<W: Write> {
    out: W,
}

impl<W: Write> ManifestWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn append(&mut self, record: &PairRecord) -> Result<(), CaptionError> {
        let line = serde_json::to_string(record).map_err(|e| CaptionError::Manifest { line: 0, message: e.to_string() })?;
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// One record per caption, appended to `out`.
pub fn emit_pairs<W: Write>(
    aug_id: &str,
    aug: &InsertionResult,
    captions: &[LevelCaption],
    provenance: &Provenance,
    out: &mut ManifestWriter<W>,
) -> Result<Vec<PairRecord>, CaptionError> {
    if captions.is_empty() {
        return Err(CaptionError::Precondition("no captions to emit".into()));
    }
    if let Some(c) = captions.iter().find(|c| c.caption.source == CaptionSource::Service && c.snapshot_paths.is_empty()) {
        return Err(CaptionError::Precondition(format!(
            "service caption at {} level has no snapshots",
            c.caption.level
        )));
    }
    captions
        .iter()
        .map(|c| {
            let record = PairRecord {
                schema_version: PAIR_SCHEMA_VERSION,
                scene_id: aug.augmented_scene.id.clone(),
                aug_id: aug_id.to_string(),
                target_class: aug.inserted.label.clone(),
                target_box: aug.location,
                level: c.caption.level,
                caption: c.caption.clone(),
                snapshot_paths: c.snapshot_paths.clone(),
                provenance: provenance.clone(),
            };
            out.append(&record)?;
            Ok(record)
        })
        .collect()
}

pub fn parse_manifest(reader: impl BufRead) -> Result<Vec<PairRecord>, CaptionError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PairRecord =
            serde_json::from_str(&line).map_err(|e| CaptionError::Manifest { line: i + 1, message: e.to_string() })?;
        if record.schema_version != PAIR_SCHEMA_VERSION {
            return Err(CaptionError::Manifest {
                line: i + 1,
                message: format!("unsupported schema_version {}", record.schema_version),
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn read_manifest(path: &Path) -> Result<Vec<PairRecord>, CaptionError> {
    parse_manifest(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Draws up to `n` records per (scene, level) group without replacement.
/// Output keeps manifest order.
pub fn sample_training_pairs(records: &[PairRecord], n: usize, seed: u64) -> Vec<PairRecord> {
    let mut groups: BTreeMap<(&str, Level), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry((r.scene_id.as_str(), r.level)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: Vec<usize> = Vec::new();
    for members in groups.values() {
        let take = n.min(members.len());
        keep.extend(sample(&mut rng, members.len(), take).into_iter().map(|k| members[k]));
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| records[i].clone()).collect()
}
