//! Per-session orchestration. Every frame passes through the same stage
//! order: resolve embeddings, match nodes into tracks, run the statistical
//! and structural detectors, then estimate the state of unflagged nodes.
//! The first `reference_frames` frames are trusted warm-up: state accrues
//! but all detection stages are skipped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detector::{
    detect_edge_modification, detect_modification, detect_structural, DetectionEvent,
    DetectorConfig, EventTarget,
};
use crate::embed::{resolve_frame, ProviderConfig};
use crate::error::{Error, Result};
use crate::estimator::{estimate_node, EstimationTrace, EstimatorConfig};
use crate::graph::{validate_frame, CleanMember, GraphSet, NodeSetId, PerceptionFrame};
use crate::matcher::{match_frame, MatchDecision, MatcherConfig};

/// Session configuration, read from one JSON file; unknown keys are
/// rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Trusted warm-up frames with detection suppressed.
    pub reference_frames: u32,
    pub embedding: ProviderConfig,
    pub matcher: MatcherConfig,
    pub detector: DetectorConfig,
    pub estimation: EstimatorConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            reference_frames: 5,
            embedding: ProviderConfig::default(),
            matcher: MatcherConfig::default(),
            detector: DetectorConfig::default(),
            estimation: EstimatorConfig::default(),
        }
    }
}

impl SessionConfig {
    pub fn new() -> Self {
        SessionConfig::default()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.estimation.validate()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TraceOptions {
    pub matching: bool,
    pub estimation: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Spawned,
    Matched,
    Absent,
}

/// Per-track line of a frame report.
#[derive(Debug, Clone, Serialize)]
pub struct SetStatus {
    pub id: NodeSetId,
    pub status: TrackStatus,
    pub active_level: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
}

/// Everything the pipeline has to say about one frame.
#[derive(Debug, Clone, Serialize)]
pub struct FrameReport {
    #[serde(rename = "t")]
    pub timestep: u32,
    pub events: Vec<DetectionEvent>,
    pub sets: Vec<SetStatus>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub match_trace: Option<Vec<MatchDecision>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimation_trace: Option<Vec<EstimationTrace>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Video-level verdict: the set of distinct attack types detected, with
/// their targets. An empty type set means no attack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoVerdict {
    pub types: Vec<crate::graph::AttackType>,
    pub targets: BTreeMap<crate::graph::AttackType, Vec<EventTarget>>,
}

/// One detection session over a monotone frame stream.
#[derive(Debug)]
pub struct Session {
    config: SessionConfig,
    trace: TraceOptions,
    state: GraphSet,
    events: Vec<DetectionEvent>,
}

impl Session {
    pub fn new(config: SessionConfig, trace: TraceOptions) -> Result<Self> {
        config.validate()?;
        Ok(Session {
            config,
            trace,
            state: GraphSet::new(),
            events: Vec::new(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn state(&self) -> &GraphSet {
        &self.state
    }

    /// Process one frame: validate, resolve, match, detect, estimate.
    /// Rejected frames leave the session state untouched.
    pub fn process_frame(&mut self, frame: &PerceptionFrame) -> Result<FrameReport> {
        let violations = validate_frame(frame);
        if !violations.is_empty() {
            let joined = violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            return Err(Error::InvalidFrame(joined));
        }
        let resolved = resolve_frame(frame, &self.config.embedding)?;
        let t = resolved.timestep;
        let matched = match_frame(&resolved, &mut self.state, &self.config.matcher)?;

        let warm_up = t <= self.config.reference_frames;
        let mut events: Vec<DetectionEvent> = Vec::new();
        let mut notes: Vec<String> = Vec::new();

        if !warm_up {
            // Statistical tests on freshly matched nodes, in input order.
            for (decision, &member_index) in
                matched.decisions.iter().zip(&matched.member_indices)
            {
                if !decision.outcome.is_match() {
                    continue;
                }
                let set_id = decision.outcome.set_id();
                let outcome = {
                    let set = self
                        .state
                        .node_sets
                        .get(&set_id)
                        .ok_or_else(|| Error::Internal(format!("missing set {set_id}")))?;
                    detect_modification(&set.members[member_index], set, &self.config.detector)?
                };
                notes.extend(outcome.notes);
                if !outcome.events.is_empty() {
                    let set = self.state.node_sets.get_mut(&set_id).expect("known id");
                    for event in &outcome.events {
                        set.flag_member(member_index, event.attack_type);
                    }
                    events.extend(outcome.events);
                }
            }
            // Edge analogue on freshly inserted edges.
            for &(key, member_index) in &matched.edge_inserts {
                let outcome = {
                    let eset = self
                        .state
                        .edge_sets
                        .get(&key)
                        .ok_or_else(|| Error::Internal("missing edge set".into()))?;
                    detect_edge_modification(
                        &eset.members[member_index],
                        eset,
                        &self.config.detector,
                    )?
                };
                notes.extend(outcome.notes);
                if !outcome.events.is_empty() {
                    let eset = self.state.edge_sets.get_mut(&key).expect("known key");
                    for event in &outcome.events {
                        eset.flag_member(member_index, event.attack_type);
                    }
                    events.extend(outcome.events);
                }
            }
            // Two-frame structural heuristics.
            events.extend(detect_structural(&mut self.state, t, &self.config.detector));
        }

        // Estimation: unflagged nodes enter the clean reference set, as the
        // resampled state when enabled, verbatim otherwise. Flagged nodes
        // stay in members only.
        let mut estimation_traces = Vec::new();
        for (decision, &member_index) in matched.decisions.iter().zip(&matched.member_indices) {
            let set_id = decision.outcome.set_id();
            let flagged = {
                let set = self.state.node_sets.get(&set_id).expect("known id");
                set.members[member_index].attack_flag.is_some()
            };
            if flagged {
                continue;
            }
            let (state_record, trace) = {
                let set = self.state.node_sets.get(&set_id).expect("known id");
                let node = &set.members[member_index];
                if self.config.estimation.enabled {
                    let (est, trace) = estimate_node(node, set, &self.config.estimation)?;
                    (est.record, Some(trace))
                } else {
                    (node.clone(), None)
                }
            };
            let set = self.state.node_sets.get_mut(&set_id).expect("known id");
            set.clean.push(CleanMember {
                member_index,
                state: state_record,
            });
            debug_assert!(set.clean_is_hygienic());
            if let Some(trace) = trace {
                estimation_traces.push(trace);
            }
        }
        for &(key, member_index) in &matched.edge_inserts {
            let eset = self.state.edge_sets.get_mut(&key).expect("known key");
            if eset.members[member_index].attack_flag.is_none() {
                eset.clean.push(member_index);
            }
        }

        let sets = self.statuses(t);
        self.events.extend(events.clone());
        Ok(FrameReport {
            timestep: t,
            events,
            sets,
            match_trace: self.trace.matching.then_some(matched.decisions),
            estimation_trace: self.trace.estimation.then_some(estimation_traces),
            notes: if self.trace.matching || self.trace.estimation {
                notes
            } else {
                Vec::new()
            },
        })
    }

    fn statuses(&self, t: u32) -> Vec<SetStatus> {
        self.state
            .node_sets
            .values()
            .map(|set| {
                let status = if set.first_seen == t {
                    TrackStatus::Spawned
                } else if set.last_matched == t {
                    TrackStatus::Matched
                } else {
                    TrackStatus::Absent
                };
                let node = matches!(status, TrackStatus::Spawned | TrackStatus::Matched)
                    .then(|| set.members.last().map(|m| m.local_id.clone()))
                    .flatten();
                SetStatus {
                    id: set.id,
                    status,
                    active_level: set.active_level,
                    node,
                }
            })
            .collect()
    }

    /// Video-level verdict over everything seen so far: distinct attack
    /// types with sorted, deduplicated target lists.
    pub fn finalize(&self) -> VideoVerdict {
        let mut targets: BTreeMap<crate::graph::AttackType, Vec<EventTarget>> = BTreeMap::new();
        for event in &self.events {
            let list = targets.entry(event.attack_type).or_default();
            if !list.contains(&event.target) {
                list.push(event.target);
            }
        }
        for list in targets.values_mut() {
            list.sort();
        }
        VideoVerdict {
            types: targets.keys().copied().collect(),
            targets,
        }
    }

    pub fn events(&self) -> &[DetectionEvent] {
        &self.events
    }
}

/// Run a whole frame sequence through a fresh session.
pub fn run_frames(
    frames: &[PerceptionFrame],
    config: SessionConfig,
    trace: TraceOptions,
) -> Result<(Vec<FrameReport>, VideoVerdict)> {
    let mut session = Session::new(config, trace)?;
    let mut reports = Vec::with_capacity(frames.len());
    for frame in frames {
        reports.push(session.process_frame(frame)?);
    }
    let verdict = session.finalize();
    Ok((reports, verdict))
}
