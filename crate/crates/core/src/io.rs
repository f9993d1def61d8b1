//! Line-delimited frame interchange format: one frame object per line so
//! sessions stream without whole-file buffering.
//!
//! Per-line schema:
//!
//! ```json
//! {"timestep": 1, "context": "warehouse",
//!  "nodes": [{"id": "obj0", "name": "...", "description": "...",
//!             "probability": 0.9, "importance": 0.5, "reasonability": 1.2,
//!             "name_embedding": [..]|null, "desc_embedding": [..]|null,
//!             "feature_embedding": [..]|null, "bbox": [x,y,w,h]|null}],
//!  "edges": [{"source": "obj0", "target": "obj1", "description": "...",
//!             "desc_embedding": [..]|null}]}
//! ```
//!
//! Edge importance defaults to the mean of the endpoint node importances
//! when not supplied.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeRecord, Embedding, Modality, NodeRecord, PerceptionFrame};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameDto {
    timestep: u32,
    context: String,
    nodes: Vec<NodeDto>,
    edges: Vec<EdgeDto>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_image_ref: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDto {
    id: String,
    name: String,
    description: String,
    probability: f64,
    importance: f64,
    reasonability: f64,
    name_embedding: Option<Vec<f64>>,
    desc_embedding: Option<Vec<f64>>,
    feature_embedding: Option<Vec<f64>>,
    bbox: Option<[f64; 4]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDto {
    source: String,
    target: String,
    description: String,
    desc_embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    importance: Option<f64>,
}

fn to_embedding(values: Option<Vec<f64>>, modality: Modality) -> Option<Embedding> {
    values.map(|v| Embedding::new(modality, v))
}

/// Parse one frame line.
pub fn parse_frame(line: &str) -> Result<PerceptionFrame> {
    let dto: FrameDto =
        serde_json::from_str(line).map_err(|e| Error::Format(e.to_string()))?;
    let timestep = dto.timestep;
    let nodes: Vec<NodeRecord> = dto
        .nodes
        .into_iter()
        .map(|n| NodeRecord {
            local_id: n.id,
            timestep,
            name_text: n.name,
            desc_text: n.description,
            name_emb: to_embedding(n.name_embedding, Modality::Name),
            desc_emb: to_embedding(n.desc_embedding, Modality::Desc),
            feat_emb: to_embedding(n.feature_embedding, Modality::Feature),
            probability: n.probability,
            importance: n.importance,
            reasonability: n.reasonability,
            attack_flag: None,
            bbox: n.bbox,
        })
        .collect();
    let node_importance = |id: &str| {
        nodes
            .iter()
            .find(|n| n.local_id == id)
            .map(|n| n.importance)
    };
    let edges = dto
        .edges
        .into_iter()
        .map(|e| {
            let importance = e.importance.unwrap_or_else(|| {
                let ends: Vec<f64> = [&e.source, &e.target]
                    .iter()
                    .filter_map(|id| node_importance(id))
                    .collect();
                if ends.is_empty() {
                    0.0
                } else {
                    ends.iter().sum::<f64>() / ends.len() as f64
                }
            });
            EdgeRecord {
                source: e.source,
                target: e.target,
                timestep,
                desc_text: e.description,
                desc_emb: to_embedding(e.desc_embedding, Modality::Desc),
                importance,
                attack_flag: None,
            }
        })
        .collect();
    Ok(PerceptionFrame {
        timestep,
        context: dto.context,
        nodes,
        edges,
        source_image_ref: dto.source_image_ref,
    })
}

/// Serialize one frame to its line representation (no trailing newline).
pub fn frame_to_line(frame: &PerceptionFrame) -> Result<String> {
    let dto = FrameDto {
        timestep: frame.timestep,
        context: frame.context.clone(),
        nodes: frame
            .nodes
            .iter()
            .map(|n| NodeDto {
                id: n.local_id.clone(),
                name: n.name_text.clone(),
                description: n.desc_text.clone(),
                probability: n.probability,
                importance: n.importance,
                reasonability: n.reasonability,
                name_embedding: n.name_emb.as_ref().map(|e| e.values.clone()),
                desc_embedding: n.desc_emb.as_ref().map(|e| e.values.clone()),
                feature_embedding: n.feat_emb.as_ref().map(|e| e.values.clone()),
                bbox: n.bbox,
            })
            .collect(),
        edges: frame
            .edges
            .iter()
            .map(|e| EdgeDto {
                source: e.source.clone(),
                target: e.target.clone(),
                description: e.desc_text.clone(),
                desc_embedding: e.desc_emb.as_ref().map(|emb| emb.values.clone()),
                importance: Some(e.importance),
            })
            .collect(),
        source_image_ref: frame.source_image_ref.clone(),
    };
    serde_json::to_string(&dto).map_err(|e| Error::Internal(e.to_string()))
}

/// Streaming frame reader. Yields `(line_number, frame)` pairs, skipping
/// blank lines; parse failures carry the 1-based line number.
pub struct FrameReader<R: BufRead> {
    inner: R,
    line: usize,
}

impl<R: BufRead> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        FrameReader { inner, line: 0 }
    }
}

impl<R: BufRead> Iterator for FrameReader<R> {
    type Item = Result<(usize, PerceptionFrame)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let mut buf = String::new();
            match self.inner.read_line(&mut buf) {
                Ok(0) => return None,
                Ok(_) => {
                    self.line += 1;
                    if buf.trim().is_empty() {
                        continue;
                    }
                    return Some(match parse_frame(buf.trim_end()) {
                        Ok(frame) => Ok((self.line, frame)),
                        Err(e) => Err(Error::Parse {
                            line: self.line,
                            message: e.to_string(),
                        }),
                    });
                }
                Err(e) => return Some(Err(e.into())),
            }
        }
    }
}

/// Write frames as one JSON object per line.
pub fn write_frames<W: Write>(mut w: W, frames: &[PerceptionFrame]) -> Result<()> {
    for frame in frames {
        writeln!(w, "{}", frame_to_line(frame)?)?;
    }
    Ok(())
}
