//! Node-to-NodeSet association. For each incoming node the matcher compares
//! its mean similarity against every active track's pairwise-similarity
//! statistics, keeps the tracks within one standard deviation in all three
//! modalities, and assigns the node to the candidate with the smallest
//! summed deviation. Unmatched nodes spawn new tracks; active levels decay
//! on misses and recover on matches.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{
    EdgeSet, Embedding, GraphSet, Modality, NodeRecord, NodeSet, NodeSetId, PerceptionFrame,
    ACTIVE_LEVEL_MAX,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherConfig {
    /// Similarity-deviation floor for the candidate filter. Also the std
    /// reported for singleton tracks, whose pairwise std is undefined.
    pub sigma_default: f64,
    /// Only the most recent `stats_window` members enter pairwise stats.
    pub stats_window: usize,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig {
            sigma_default: 0.1,
            stats_window: 50,
        }
    }
}

/// Mean and standard deviation of pairwise similarities inside a track,
/// for one modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModalityStats {
    pub modality: Modality,
    pub mean: f64,
    pub std: f64,
}

/// Cosine similarity of two embeddings of the same modality and dimension.
/// Errors on zero vectors; the result is clamped to [-1, 1].
pub fn cosine_sim(u: &Embedding, v: &Embedding) -> Result<f64> {
    if u.modality != v.modality {
        return Err(Error::ModalityMismatch {
            left: u.modality,
            right: v.modality,
        });
    }
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            modality: u.modality,
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    let nu = u.norm();
    let nv = v.norm();
    if nu <= f64::EPSILON || nv <= f64::EPSILON {
        return Err(Error::DegenerateEmbedding);
    }
    Ok((u.dot(v) / (nu * nv)).clamp(-1.0, 1.0))
}

fn stats_members<'a>(set: &'a NodeSet, cfg: &MatcherConfig) -> &'a [NodeRecord] {
    let len = set.members.len();
    let start = len.saturating_sub(cfg.stats_window);
    &set.members[start..]
}

/// Pairwise-similarity statistics of a track in one modality. Singleton
/// tracks report (1.0, sigma_default); the std over pairs is the population
/// standard deviation.
pub fn nodeset_stats(set: &NodeSet, modality: Modality, cfg: &MatcherConfig) -> Result<ModalityStats> {
    let members = stats_members(set, cfg);
    if members.is_empty() {
        return Err(Error::EmptyNodeSet);
    }
    if members.len() == 1 {
        return Ok(ModalityStats {
            modality,
            mean: 1.0,
            std: cfg.sigma_default,
        });
    }
    let mut sims = Vec::with_capacity(members.len() * (members.len() - 1) / 2);
    for p in 0..members.len() {
        for q in (p + 1)..members.len() {
            sims.push(cosine_sim(
                members[p].require_embedding(modality)?,
                members[q].require_embedding(modality)?,
            )?);
        }
    }
    let n = sims.len() as f64;
    let mean = sims.iter().sum::<f64>() / n;
    let var = sims.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    Ok(ModalityStats {
        modality,
        mean,
        std: var.max(0.0).sqrt(),
    })
}

/// Everything evaluated for one (node, track) pair; kept for trace output.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateEval {
    pub set: NodeSetId,
    /// Mean similarity of the node to the track members, per modality.
    pub similarity: [f64; 3],
    pub mean: [f64; 3],
    pub std: [f64; 3],
    /// Effective std used by the filter, floored at sigma_default.
    pub std_effective: [f64; 3],
    pub within_filter: bool,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchOutcome {
    Matched(NodeSetId),
    Spawned(NodeSetId),
}

impl MatchOutcome {
    pub fn set_id(&self) -> NodeSetId {
        match self {
            MatchOutcome::Matched(id) | MatchOutcome::Spawned(id) => *id,
        }
    }

    pub fn is_match(&self) -> bool {
        matches!(self, MatchOutcome::Matched(_))
    }
}

/// The assignment made for one incoming node.
#[derive(Debug, Clone, Serialize)]
pub struct MatchDecision {
    pub local_id: String,
    pub outcome: MatchOutcome,
    /// Tracks that passed the one-sigma filter in every modality.
    pub candidates: Vec<NodeSetId>,
    /// Summed absolute deviation per candidate; covers exactly `candidates`.
    pub distances: BTreeMap<NodeSetId, f64>,
    /// Full evaluation detail for every unclaimed active track.
    pub evaluations: Vec<CandidateEval>,
}

/// Decide whether `node` joins an existing active track or spawns a new
/// one. `spawn_id` is the id the new track would take; `claimed` tracks are
/// skipped so assignments stay one-to-one within a frame.
pub fn match_node(
    node: &NodeRecord,
    active: &[&NodeSet],
    claimed: &BTreeSet<NodeSetId>,
    spawn_id: NodeSetId,
    cfg: &MatcherConfig,
) -> Result<MatchDecision> {
    let mut evaluations = Vec::new();
    let mut candidates = Vec::new();
    let mut distances = BTreeMap::new();
    let mut best: Option<(f64, NodeSetId)> = None;

    for set in active {
        if claimed.contains(&set.id) || !set.is_active() {
            continue;
        }
        let members = stats_members(set, cfg);
        let mut similarity = [0.0; 3];
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        let mut std_eff = [0.0; 3];
        let mut within = true;
        let mut distance = 0.0;
        for (mi, modality) in Modality::ALL.into_iter().enumerate() {
            let stats = nodeset_stats(set, modality, cfg)?;
            let emb = node.require_embedding(modality)?;
            let mut total = 0.0;
            for member in members {
                total += cosine_sim(emb, member.require_embedding(modality)?)?;
            }
            let s = total / members.len() as f64;
            let dev = (s - stats.mean).abs();
            let eff = stats.std.max(cfg.sigma_default);
            similarity[mi] = s;
            mean[mi] = stats.mean;
            std[mi] = stats.std;
            std_eff[mi] = eff;
            distance += dev;
            if dev > eff {
                within = false;
            }
        }
        evaluations.push(CandidateEval {
            set: set.id,
            similarity,
            mean,
            std,
            std_effective: std_eff,
            within_filter: within,
            distance,
        });
        if within {
            candidates.push(set.id);
            distances.insert(set.id, distance);
            let better = match best {
                None => true,
                // Strict improvement only: ties keep the lower (older) id.
                Some((d, _)) => distance < d,
            };
            if better {
                best = Some((distance, set.id));
            }
        }
    }

    let outcome = match best {
        Some((_, id)) => MatchOutcome::Matched(id),
        None => MatchOutcome::Spawned(spawn_id),
    };
    Ok(MatchDecision {
        local_id: node.local_id.clone(),
        outcome,
        candidates,
        distances,
        evaluations,
    })
}

/// Per-frame active-level update: matched tracks step up, everything else
/// steps down, both clamped to [0, 3]. Tracks spawned this frame keep their
/// initial level.
pub fn update_active_levels(
    sets: &mut BTreeMap<NodeSetId, NodeSet>,
    matched: &BTreeSet<NodeSetId>,
    spawned: &BTreeSet<NodeSetId>,
) {
    for (id, set) in sets.iter_mut() {
        if spawned.contains(id) {
            continue;
        }
        if matched.contains(id) {
            set.active_level = (set.active_level + 1).min(ACTIVE_LEVEL_MAX);
        } else {
            set.active_level = set.active_level.saturating_sub(1);
        }
    }
}

/// Result of matching one frame into the session state.
#[derive(Debug, Clone)]
pub struct FrameMatch {
    pub decisions: Vec<MatchDecision>,
    /// Member index of each decision's node inside its track.
    pub member_indices: Vec<usize>,
    /// Edges appended this frame: (edge-set key, member index).
    pub edge_inserts: Vec<((NodeSetId, NodeSetId), usize)>,
}

/// Match a resolved frame into the state: greedy one-to-one assignment in
/// node input order, track bookkeeping, edge insertion keyed by the matched
/// endpoints, and one active-level update.
pub fn match_frame(
    frame: &PerceptionFrame,
    state: &mut GraphSet,
    cfg: &MatcherConfig,
) -> Result<FrameMatch> {
    if let Some(last) = state.last_timestep() {
        if frame.timestep <= last {
            return Err(Error::TimestepRegression {
                frame: frame.timestep,
                last,
            });
        }
    }
    let t = frame.timestep;
    let mut claimed: BTreeSet<NodeSetId> = BTreeSet::new();
    let mut matched: BTreeSet<NodeSetId> = BTreeSet::new();
    let mut spawned: BTreeSet<NodeSetId> = BTreeSet::new();
    let mut decisions = Vec::with_capacity(frame.nodes.len());
    let mut member_indices = Vec::with_capacity(frame.nodes.len());
    let mut assignment: BTreeMap<String, NodeSetId> = BTreeMap::new();

    for node in &frame.nodes {
        let spawn_id = state.peek_next_id();
        let decision = {
            let active: Vec<&NodeSet> = state
                .node_sets
                .values()
                .filter(|s| s.is_active())
                .collect();
            match_node(node, &active, &claimed, spawn_id, cfg)?
        };
        let set_id = decision.outcome.set_id();
        match decision.outcome {
            MatchOutcome::Matched(id) => {
                let set = state
                    .node_sets
                    .get_mut(&id)
                    .ok_or_else(|| Error::Internal(format!("matched unknown set {id}")))?;
                set.members.push(node.clone());
                set.last_matched = t;
                set.removal_fired = false;
                member_indices.push(set.members.len() - 1);
                matched.insert(id);
            }
            MatchOutcome::Spawned(_) => {
                let id = state.allocate_id();
                debug_assert_eq!(id, spawn_id);
                state.node_sets.insert(id, NodeSet::spawn(id, node.clone()));
                member_indices.push(0);
                spawned.insert(id);
            }
        }
        claimed.insert(set_id);
        assignment.insert(node.local_id.clone(), set_id);
        decisions.push(decision);
    }

    let mut edge_inserts = Vec::with_capacity(frame.edges.len());
    for edge in &frame.edges {
        let (Some(&a), Some(&b)) = (
            assignment.get(&edge.source),
            assignment.get(&edge.target),
        ) else {
            return Err(Error::InvalidFrame(format!(
                "edge endpoint `{}`/`{}` missing from frame",
                edge.source, edge.target
            )));
        };
        let key = (a, b);
        let eset = state
            .edge_sets
            .entry(key)
            .or_insert_with(|| EdgeSet::new(key));
        eset.members.push(edge.clone());
        edge_inserts.push((key, eset.members.len() - 1));
    }

    update_active_levels(&mut state.node_sets, &matched, &spawned);
    state.push_frame(frame.clone())?;

    Ok(FrameMatch {
        decisions,
        member_indices,
        edge_inserts,
    })
}
