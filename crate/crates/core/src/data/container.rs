//! The `EMB1` binary container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset 0   4 bytes   magic "EMB1"
//! offset 4   u32       header length H in bytes
//! offset 8   H bytes   UTF-8 JSON header
//! offset 8+H           count × width f64 values, row-major
//! ```
//!
//! The header always carries `version`, `dim`, `count`, `labels`,
//! `sample_ids` and `payload: "f64le"`. Containers holding layer traces
//! or candidate probabilities add `kind`:
//!
//! * `kind: "layers"` — `layers` = L and `dim` = per-layer width; each row
//!   is the L layer vectors concatenated, so the row width is `L·dim`.
//! * `kind: "candidates"` — `dim` = k; each row holds P_1..P_k. Optional
//!   `token_probs[sample][candidate]` lists the per-token factors; an empty
//!   list marks a sample stored without them.
//!
//! A missing `kind` means plain embeddings. Unknown header keys are kept
//! as provenance metadata and written back unchanged.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{CandidateBatch, CandidateSet, EmbeddingSet, LayerTraceSet};
use crate::error::{GemError, Result};

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const VERSION: u32 = 1;
const PAYLOAD_F64LE: &str = "f64le";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContainerKind {
    Embeddings,
    Layers,
    Candidates,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<ContainerKind>,
    dim: usize,
    count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layers: Option<usize>,
    labels: Vec<super::Label>,
    sample_ids: Vec<String>,
    payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    token_probs: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(flatten)]
    meta: BTreeMap<String, serde_json::Value>,
}

/// A decoded container of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Container {
    Embeddings(EmbeddingSet),
    Layers(LayerTraceSet),
    Candidates(CandidateBatch),
}

impl Container {
    pub fn kind(&self) -> ContainerKind {
        match self {
            Container::Embeddings(_) => ContainerKind::Embeddings,
            Container::Layers(_) => ContainerKind::Layers,
            Container::Candidates(_) => ContainerKind::Candidates,
        }
    }
}

fn encode(header: &Header, payload: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let header_len = u32::try_from(json.len())
        .map_err(|_| GemError::validation("header", "larger than 4 GiB"))?;
    let mut out = Vec::with_capacity(8 + json.len() + payload.len() * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn embeddings_header(set: &EmbeddingSet) -> Header {
    Header {
        version: VERSION,
        kind: None,
        dim: set.dim(),
        count: set.count(),
        layers: None,
        labels: set.labels().to_vec(),
        sample_ids: set.sample_ids().to_vec(),
        payload: PAYLOAD_F64LE.to_string(),
        token_probs: None,
        meta: BTreeMap::new(),
    }
}

pub fn encode_embeddings(set: &EmbeddingSet) -> Result<Vec<u8>> {
    set.validate()?;
    encode(&embeddings_header(set), set.as_slice())
}

pub fn encode_layers(set: &LayerTraceSet) -> Result<Vec<u8>> {
    set.matrix().validate()?;
    let mut header = embeddings_header(set.matrix());
    header.kind = Some(ContainerKind::Layers);
    header.dim = set.dim();
    header.layers = Some(set.layers());
    encode(&header, set.matrix().as_slice())
}

pub fn encode_candidates(batch: &CandidateBatch) -> Result<Vec<u8>> {
    let payload: Vec<f64> = batch
        .sets
        .iter()
        .flat_map(|s| s.seq_probs().iter().copied())
        .collect();
    // Sets without factors are written as an empty list so the rest keep theirs.
    let token_probs = if batch.sets.iter().any(|s| s.token_probs().is_some()) {
        Some(
            batch
                .sets
                .iter()
                .map(|s| s.token_probs().unwrap_or_default().to_vec())
                .collect(),
        )
    } else {
        None
    };
    let header = Header {
        version: VERSION,
        kind: Some(ContainerKind::Candidates),
        dim: batch.k(),
        count: batch.count(),
        layers: None,
        labels: batch.labels.clone(),
        sample_ids: batch.sample_ids.clone(),
        payload: PAYLOAD_F64LE.to_string(),
        token_probs,
        meta: BTreeMap::new(),
    };
    encode(&header, &payload)
}

fn take<'a>(bytes: &'a [u8], at: usize, len: usize, what: &'static str) -> Result<&'a [u8]> {
    bytes.get(at..at + len).ok_or(GemError::Truncated {
        what,
        expected: len as u64,
        found: bytes.len().saturating_sub(at) as u64,
    })
}

pub fn decode(bytes: &[u8]) -> Result<Container> {
    let magic = take(bytes, 0, 4, "magic")?;
    if magic != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(magic);
        return Err(GemError::BadMagic { found });
    }
    let len_bytes = take(bytes, 4, 4, "header length")?;
    let header_len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
    let header_bytes = take(bytes, 8, header_len, "header")?;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| GemError::Header(e.to_string()))?;
    if header.version != VERSION {
        return Err(GemError::Header(format!(
            "unsupported version {}",
            header.version
        )));
    }
    if header.payload != PAYLOAD_F64LE {
        return Err(GemError::Header(format!(
            "unsupported payload encoding {:?}",
            header.payload
        )));
    }
    let kind = header.kind.unwrap_or(ContainerKind::Embeddings);
    let width = match kind {
        ContainerKind::Layers => {
            let layers = header
                .layers
                .ok_or_else(|| GemError::Header("layers container without `layers`".into()))?;
            header
                .dim
                .checked_mul(layers)
                .ok_or_else(|| GemError::Header("row width overflows".into()))?
        }
        _ => header.dim,
    };
    let expected = header
        .count
        .checked_mul(width)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| GemError::Header("payload size overflows".into()))?;
    let payload = &bytes[8 + header_len..];
    if payload.len() < expected {
        return Err(GemError::Truncated {
            what: "payload",
            expected: expected as u64,
            found: payload.len() as u64,
        });
    }
    if payload.len() > expected {
        return Err(GemError::Header(format!(
            "header declares {} x {} values but payload holds {} bytes",
            header.count,
            width,
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if header.labels.len() != header.count || header.sample_ids.len() != header.count {
        return Err(GemError::Header(format!(
            "count {} disagrees with {} labels / {} sample_ids",
            header.count,
            header.labels.len(),
            header.sample_ids.len()
        )));
    }

    match kind {
        ContainerKind::Embeddings => Ok(Container::Embeddings(EmbeddingSet::new(
            width,
            values,
            header.labels,
            header.sample_ids,
        )?)),
        ContainerKind::Layers => {
            let matrix = EmbeddingSet::new(width, values, header.labels, header.sample_ids)?;
            Ok(Container::Layers(LayerTraceSet::new(
                header.layers.unwrap_or(1),
                matrix,
            )?))
        }
        ContainerKind::Candidates => {
            if width == 0 {
                return Err(GemError::validation("dim", "must be at least 1"));
            }
            if let Some(tp) = header.token_probs.as_ref().filter(|tp| tp.len() != header.count) {
                return Err(GemError::Header(format!(
                    "{} token_probs entries for {} samples",
                    tp.len(),
                    header.count
                )));
            }
            let mut token_probs = header.token_probs.map(Vec::into_iter);
            let mut sets = Vec::with_capacity(header.count);
            for (i, row) in values.chunks_exact(width).enumerate() {
                let mut set = CandidateSet::new(row.to_vec()).map_err(|e| GemError::Sample {
                    field: "candidates",
                    index: i,
                    reason: e.to_string(),
                })?;
                if let Some(tp) = token_probs
                    .as_mut()
                    .and_then(Iterator::next)
                    .filter(|tp| !tp.is_empty())
                {
                    set = set.with_token_probs(tp).map_err(|e| GemError::Sample {
                        field: "token_probs",
                        index: i,
                        reason: e.to_string(),
                    })?;
                }
                sets.push(set);
            }
            Ok(Container::Candidates(CandidateBatch::new(
                sets,
                header.labels,
                header.sample_ids,
            )?))
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| GemError::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| GemError::io(path, e))
}

/// Writes `set` to `path`. The set is validated first; nothing is written if it is invalid.
pub fn write_container(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_embeddings(set)?;
    write_bytes(path.as_ref(), &bytes)
}

pub fn read_container(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    match read_any(path)? {
        Container::Embeddings(set) => Ok(set),
        other => Err(GemError::Header(format!(
            "expected an embeddings container, found {:?}",
            other.kind()
        ))),
    }
}

pub fn read_any(path: impl AsRef<Path>) -> Result<Container> {
    decode(&read_bytes(path.as_ref())?)
}

pub fn write_layer_traces(set: &LayerTraceSet, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_layers(set)?;
    write_bytes(path.as_ref(), &bytes)
}

pub fn read_layer_traces(path: impl AsRef<Path>) -> Result<LayerTraceSet> {
    match read_any(path)? {
        Container::Layers(set) => Ok(set),
        other => Err(GemError::Header(format!(
            "expected a layers container, found {:?}",
            other.kind()
        ))),
    }
}

pub fn write_candidates(batch: &CandidateBatch, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_candidates(batch)?;
    write_bytes(path.as_ref(), &bytes)
}

pub fn read_candidates(path: impl AsRef<Path>) -> Result<CandidateBatch> {
    match read_any(path)? {
        Container::Candidates(batch) => Ok(batch),
        other => Err(GemError::Header(format!(
            "expected a candidates container, found {:?}",
            other.kind()
        ))),
    }
}
