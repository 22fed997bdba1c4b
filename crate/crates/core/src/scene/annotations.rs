//! Sidecar object manifest (`<scene>.objects.jsonl`).
//!
//! Line 1 is an [`AnnotationHeader`]; every following non-empty line is one
//! [`ObjectRecord`]. Point membership is stored as sorted half-open index
//! ranges `[start, end)` into the companion PLY cloud.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{OrientedBox, Result, Scene, SceneError, SceneObject};
use crate::geometry::Vec3;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationHeader {
    pub schema_version: u32,
    pub scene_id: String,
    pub num_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    pub id: u32,
    pub label: String,
    pub center: Vec3,
    pub size: Vec3,
    pub yaw: f64,
    pub is_stander: bool,
    pub point_ranges: Vec<[u32; 2]>,
}

impl ObjectRecord {
    pub fn from_object(obj: &SceneObject) -> Self {
        Self {
            id: obj.id,
            label: obj.label.clone(),
            center: obj.bbox.center,
            size: obj.bbox.size,
            yaw: obj.bbox.yaw,
            is_stander: obj.is_stander,
            point_ranges: compress_ranges(&obj.point_indices),
        }
    }

    pub fn into_object(self) -> SceneObject {
        let point_indices = self.point_ranges.iter().flat_map(|[a, b]| *a..*b).collect();
        SceneObject {
            id: self.id,
            label: self.label,
            bbox: OrientedBox {
                center: self.center,
                size: self.size,
                yaw: self.yaw,
            },
            point_indices,
            is_stander: self.is_stander,
        }
    }
}

/// Run-length encodes indices into half-open ranges, preserving order.
fn compress_ranges(indices: &[u32]) -> Vec<[u32; 2]> {
    let mut out: Vec<[u32; 2]> = Vec::new();
    for &i in indices {
        match out.last_mut() {
            Some(r) if r[1] == i => r[1] = i + 1,
            _ => out.push([i, i + 1]),
        }
    }
    out
}

pub fn write_annotations(path: &Path, scene: &Scene) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| SceneError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = AnnotationHeader {
        schema_version: SCHEMA_VERSION,
        scene_id: scene.id.clone(),
        num_points: scene.cloud().len(),
    };
    write_json_line(&mut w, &header).map_err(|e| SceneError::io(path, e))?;
    for obj in scene.objects() {
        write_json_line(&mut w, &ObjectRecord::from_object(obj)).map_err(|e| SceneError::io(path, e))?;
    }
    w.flush().map_err(|e| SceneError::io(path, e))
}

fn write_json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")
}

pub fn read_annotations(path: &Path) -> Result<(AnnotationHeader, Vec<ObjectRecord>)> {
    let file = std::fs::File::open(path).map_err(|e| SceneError::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header: AnnotationHeader = loop {
        match lines.next() {
            None => {
                return Err(SceneError::Annotation {
                    line: 1,
                    field: "schema_version".into(),
                    message: "missing header line".into(),
                })
            }
            Some((n, line)) => {
                let line = line.map_err(|e| SceneError::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| json_error(n + 1, "header", e))?;
            }
        }
    };
    if header.schema_version != SCHEMA_VERSION {
        return Err(SceneError::Annotation {
            line: 1,
            field: "schema_version".into(),
            message: format!("unsupported version {}, expected {SCHEMA_VERSION}", header.schema_version),
        });
    }

    let mut records = Vec::new();
    for (n, line) in lines {
        let line = line.map_err(|e| SceneError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ObjectRecord = serde_json::from_str(&line).map_err(|e| json_error(n + 1, "object", e))?;
        for r in &rec.point_ranges {
            if r[0] > r[1] || r[1] as usize > header.num_points {
                return Err(SceneError::Validation(format!(
                    "object {} has point range [{}, {}) outside the {} cloud points",
                    rec.id, r[0], r[1], header.num_points
                )));
            }
        }
        if rec.size.iter().any(|s| *s < 0.0) {
            return Err(SceneError::Annotation {
                line: n + 1,
                field: "size".into(),
                message: "negative extent".into(),
            });
        }
        records.push(rec);
    }
    Ok((header, records))
}

fn json_error(line: usize, what: &str, e: serde_json::Error) -> SceneError {
    // serde_json reports "missing field `x`" / "unknown field `x`"; surface the name when present
    let msg = e.to_string();
    let field = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| what.to_string());
    SceneError::Annotation {
        line,
        field,
        message: msg,
    }
}
