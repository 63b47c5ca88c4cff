//! Human-editable JSON Lines fixtures: one `{"id", "label", "vector"}` object per line.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{EmbeddingSet, Label};
use crate::error::{GemError, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Line {
    id: String,
    #[serde(default = "unknown")]
    label: Label,
    vector: Vec<f64>,
}

fn unknown() -> Label {
    Label::Unknown
}

pub fn parse_jsonl(reader: impl BufRead) -> Result<EmbeddingSet> {
    let mut dim = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| GemError::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let index = ids.len();
        let parsed: Line = serde_json::from_str(&line).map_err(|e| GemError::Sample {
            field: "line",
            index,
            reason: format!("line {}: {e}", lineno + 1),
        })?;
        let width = *dim.get_or_insert(parsed.vector.len());
        if parsed.vector.len() != width {
            return Err(GemError::Sample {
                field: "vector",
                index,
                reason: format!("ragged dimension {} (expected {width})", parsed.vector.len()),
            });
        }
        if !seen.insert(parsed.id.clone()) {
            return Err(GemError::Sample {
                field: "sample_id",
                index,
                reason: format!("duplicate id {:?}", parsed.id),
            });
        }
        data.extend_from_slice(&parsed.vector);
        labels.push(parsed.label);
        ids.push(parsed.id);
    }
    EmbeddingSet::new(dim.unwrap_or(0), data, labels, ids)
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| GemError::io(path, e))?;
    parse_jsonl(BufReader::new(file)).map_err(|e| match e {
        GemError::Io { source, .. } => GemError::io(path, source),
        other => other,
    })
}

pub fn write_jsonl(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    set.validate()?;
    let mut out = Vec::new();
    for ((row, label), id) in set.rows().zip(set.labels()).zip(set.sample_ids()) {
        let line = Line {
            id: id.clone(),
            label: *label,
            vector: row.to_vec(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.push(b'\n');
    }
    File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| GemError::io(path, e))
}
