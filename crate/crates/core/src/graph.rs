//! Domain types for perception graphs and the temporal structures built on
//! top of them: per-frame graphs, the running union of all frames, and the
//! persistent NodeSet/EdgeSet identity tracks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Embedding modality. Nodes carry one vector per modality; edges carry only
/// a description embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Name,
    Desc,
    Feature,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Name, Modality::Desc, Modality::Feature];

    pub fn label(self) -> &'static str {
        match self {
            Modality::Name => "name",
            Modality::Desc => "desc",
            Modality::Feature => "feature",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A fixed-dimension vector in one modality's latent space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub modality: Modality,
    pub values: Vec<f64>,
}

impl Embedding {
    pub fn new(modality: Modality, values: Vec<f64>) -> Self {
        Embedding { modality, values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        !self.values.is_empty() && self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Unit-normalized copy. Errors on a zero vector.
    pub fn normalized(&self) -> Result<Embedding> {
        let n = self.norm();
        if n <= f64::EPSILON {
            return Err(Error::DegenerateEmbedding);
        }
        Ok(Embedding {
            modality: self.modality,
            values: self.values.iter().map(|v| v / n).collect(),
        })
    }
}

/// The four cognitive-attack classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackType {
    Text,
    Visual,
    Removal,
    Addition,
}

impl AttackType {
    pub const ALL: [AttackType; 4] = [
        AttackType::Text,
        AttackType::Visual,
        AttackType::Removal,
        AttackType::Addition,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AttackType::Text => "text",
            AttackType::Visual => "visual",
            AttackType::Removal => "removal",
            AttackType::Addition => "addition",
        }
    }
}

impl fmt::Display for AttackType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One observed object instance in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub local_id: String,
    pub timestep: u32,
    pub name_text: String,
    pub desc_text: String,
    pub name_emb: Option<Embedding>,
    pub desc_emb: Option<Embedding>,
    pub feat_emb: Option<Embedding>,
    /// Recognition probability in [0, 1].
    pub probability: f64,
    /// Task importance in [0, 1].
    pub importance: f64,
    /// Contextual plausibility in [-3, 3].
    pub reasonability: f64,
    pub attack_flag: Option<AttackType>,
    /// Pixel-space rectangle (x, y, w, h). Carried opaquely for reports.
    pub bbox: Option<[f64; 4]>,
}

impl NodeRecord {
    pub fn embedding(&self, m: Modality) -> Option<&Embedding> {
        match m {
            Modality::Name => self.name_emb.as_ref(),
            Modality::Desc => self.desc_emb.as_ref(),
            Modality::Feature => self.feat_emb.as_ref(),
        }
    }

    pub fn require_embedding(&self, m: Modality) -> Result<&Embedding> {
        self.embedding(m).ok_or_else(|| Error::MissingVector {
            id: self.local_id.clone(),
            modality: m,
        })
    }

    pub fn set_embedding(&mut self, emb: Embedding) {
        match emb.modality {
            Modality::Name => self.name_emb = Some(emb),
            Modality::Desc => self.desc_emb = Some(emb),
            Modality::Feature => self.feat_emb = Some(emb),
        }
    }
}

/// A relation between two nodes of the same frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub source: String,
    pub target: String,
    pub timestep: u32,
    pub desc_text: String,
    pub desc_emb: Option<Embedding>,
    /// Mean of the endpoint node importances when not supplied on the wire.
    pub importance: f64,
    pub attack_flag: Option<AttackType>,
}

/// All nodes and edges observed at one timestep, plus the context tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionFrame {
    pub timestep: u32,
    pub context: String,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
    /// Opaque pointer to the source image; never read by the engine.
    pub source_image_ref: Option<String>,
}

/// A violation of a frame invariant. Violations are data, not failures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

fn check_embedding(out: &mut Vec<Violation>, field: String, emb: &Option<Embedding>) {
    if let Some(e) = emb {
        if !e.is_finite() {
            out.push(Violation {
                field,
                rule: "embedding values must be finite and non-empty".into(),
            });
        }
    }
}

/// Check every type invariant of a frame. Returns an empty list iff the
/// frame is well formed; each violation names the offending field.
pub fn validate_frame(frame: &PerceptionFrame) -> Vec<Violation> {
    let mut out = Vec::new();
    if frame.timestep < 1 {
        out.push(Violation {
            field: "timestep".into(),
            rule: "timestep must be >= 1".into(),
        });
    }
    let mut seen = BTreeSet::new();
    for (i, node) in frame.nodes.iter().enumerate() {
        if !seen.insert(node.local_id.clone()) {
            out.push(Violation {
                field: format!("nodes[{i}].id"),
                rule: format!("duplicate local id `{}`", node.local_id),
            });
        }
        if node.timestep != frame.timestep {
            out.push(Violation {
                field: format!("nodes[{i}].timestep"),
                rule: "node timestep differs from frame timestep".into(),
            });
        }
        if !in_range(node.probability, 0.0, 1.0) {
            out.push(Violation {
                field: format!("nodes[{i}].probability"),
                rule: "probability out of [0, 1]".into(),
            });
        }
        if !in_range(node.importance, 0.0, 1.0) {
            out.push(Violation {
                field: format!("nodes[{i}].importance"),
                rule: "importance out of [0, 1]".into(),
            });
        }
        if !in_range(node.reasonability, -3.0, 3.0) {
            out.push(Violation {
                field: format!("nodes[{i}].reasonability"),
                rule: "reasonability out of [-3, 3]".into(),
            });
        }
        check_embedding(&mut out, format!("nodes[{i}].name_embedding"), &node.name_emb);
        check_embedding(&mut out, format!("nodes[{i}].desc_embedding"), &node.desc_emb);
        check_embedding(
            &mut out,
            format!("nodes[{i}].feature_embedding"),
            &node.feat_emb,
        );
    }
    for (i, edge) in frame.edges.iter().enumerate() {
        if edge.source == edge.target {
            out.push(Violation {
                field: format!("edges[{i}]"),
                rule: "self-loop edge".into(),
            });
        }
        for (end, id) in [("source", &edge.source), ("target", &edge.target)] {
            if !seen.contains(id) {
                out.push(Violation {
                    field: format!("edges[{i}].{end}"),
                    rule: format!("dangling edge endpoint `{id}`"),
                });
            }
        }
        if !in_range(edge.importance, 0.0, 1.0) {
            out.push(Violation {
                field: format!("edges[{i}].importance"),
                rule: "importance out of [0, 1]".into(),
            });
        }
        check_embedding(&mut out, format!("edges[{i}].desc_embedding"), &edge.desc_emb);
    }
    out
}

/// Persistent identity of one tracked object. Ids are monotonically
/// increasing integers within a session.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct NodeSetId(pub u64);

impl fmt::Display for NodeSetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Maximum active level; sets spawn at this value.
pub const ACTIVE_LEVEL_MAX: u8 = 3;

/// Clean (never-flagged) entry of a NodeSet. `state` is the stored filter
/// state for that timestep, which may differ from the raw observation kept
/// in `members` for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanMember {
    pub member_index: usize,
    pub state: NodeRecord,
}

/// The temporal track of all observations assigned to one object identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeSet {
    pub id: NodeSetId,
    /// Raw observations in timestep order.
    pub members: Vec<NodeRecord>,
    /// Clean reference states, a subset of `members` by index.
    pub clean: Vec<CleanMember>,
    /// Liveness counter in [0, 3]; 0 means absent.
    pub active_level: u8,
    pub first_seen: u32,
    pub last_matched: u32,
    /// Reasonability of the spawning observation.
    pub spawn_reasonability: f64,
    /// One removal alarm per disappearance episode.
    pub removal_fired: bool,
    /// One addition alarm per NodeSet.
    pub addition_fired: bool,
}

impl NodeSet {
    pub fn spawn(id: NodeSetId, node: NodeRecord) -> Self {
        let t = node.timestep;
        let rho = node.reasonability;
        NodeSet {
            id,
            members: vec![node],
            clean: Vec::new(),
            active_level: ACTIVE_LEVEL_MAX,
            first_seen: t,
            last_matched: t,
            spawn_reasonability: rho,
            removal_fired: false,
            addition_fired: false,
        }
    }

    pub fn is_active(&self) -> bool {
        self.active_level > 0
    }

    pub fn clean_states(&self) -> impl Iterator<Item = &NodeRecord> {
        self.clean.iter().map(|c| &c.state)
    }

    /// Flag a member as attacked and scrub it from the clean subset. An
    /// existing flag is kept so a mixed attack records its first class.
    pub fn flag_member(&mut self, index: usize, attack: AttackType) {
        if let Some(member) = self.members.get_mut(index) {
            member.attack_flag.get_or_insert(attack);
        }
        self.clean.retain(|c| c.member_index != index);
    }

    /// Historical mean task importance of the clean states, falling back to
    /// the raw members when no clean state exists yet.
    pub fn mean_importance(&self) -> f64 {
        let (sum, n) = if self.clean.is_empty() {
            (
                self.members.iter().map(|m| m.importance).sum::<f64>(),
                self.members.len(),
            )
        } else {
            (
                self.clean.iter().map(|c| c.state.importance).sum::<f64>(),
                self.clean.len(),
            )
        };
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Debug check: no clean entry may reference a flagged member.
    pub fn clean_is_hygienic(&self) -> bool {
        self.clean.iter().all(|c| {
            c.state.attack_flag.is_none()
                && self
                    .members
                    .get(c.member_index)
                    .map(|m| m.attack_flag.is_none())
                    .unwrap_or(false)
        })
    }
}

/// The temporal track of one object-pair relation. Edge states are never
/// resampled, so clean entries are plain member indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeSet {
    pub key: (NodeSetId, NodeSetId),
    pub members: Vec<EdgeRecord>,
    pub clean: Vec<usize>,
}

impl EdgeSet {
    pub fn new(key: (NodeSetId, NodeSetId)) -> Self {
        EdgeSet {
            key,
            members: Vec::new(),
            clean: Vec::new(),
        }
    }

    pub fn clean_states(&self) -> impl Iterator<Item = &EdgeRecord> {
        self.clean.iter().filter_map(|&i| self.members.get(i))
    }

    pub fn flag_member(&mut self, index: usize, attack: AttackType) {
        if let Some(member) = self.members.get_mut(index) {
            member.attack_flag.get_or_insert(attack);
        }
        self.clean.retain(|&i| i != index);
    }
}

/// Union of all perception graphs observed so far. Frames keep their
/// original timestamps; tracks accumulate across them.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GraphSet {
    pub frames: Vec<PerceptionFrame>,
    pub node_sets: BTreeMap<NodeSetId, NodeSet>,
    pub edge_sets: BTreeMap<(NodeSetId, NodeSetId), EdgeSet>,
    next_id: u64,
}

impl GraphSet {
    pub fn new() -> Self {
        GraphSet::default()
    }

    /// Build the union of a frame sequence. The per-frame node and edge
    /// multisets are preserved verbatim; identity tracks are left to the
    /// matcher.
    pub fn from_frames(frames: Vec<PerceptionFrame>) -> Result<Self> {
        let mut state = GraphSet::new();
        for frame in frames {
            state.push_frame(frame)?;
        }
        Ok(state)
    }

    /// Append a frame, enforcing strictly increasing timesteps.
    pub fn push_frame(&mut self, frame: PerceptionFrame) -> Result<()> {
        if let Some(last) = self.last_timestep() {
            if frame.timestep <= last {
                return Err(Error::TimestepRegression {
                    frame: frame.timestep,
                    last,
                });
            }
        }
        self.frames.push(frame);
        Ok(())
    }

    pub fn last_timestep(&self) -> Option<u32> {
        self.frames.last().map(|f| f.timestep)
    }

    pub fn allocate_id(&mut self) -> NodeSetId {
        let id = NodeSetId(self.next_id);
        self.next_id += 1;
        id
    }

    /// Id the next spawn would take, without allocating it.
    pub fn peek_next_id(&self) -> NodeSetId {
        NodeSetId(self.next_id)
    }

    /// Total nodes ingested across all frames.
    pub fn total_frame_nodes(&self) -> usize {
        self.frames.iter().map(|f| f.nodes.len()).sum()
    }

    /// Total members across all NodeSets; equals `total_frame_nodes` after
    /// matching (no node lost or duplicated).
    pub fn total_member_nodes(&self) -> usize {
        self.node_sets.values().map(|s| s.members.len()).sum()
    }
}
