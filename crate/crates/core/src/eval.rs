//! Evaluation harness. Scores detector verdicts against ground truth:
//! per-category and overall accuracy with exact label-set matching (a mixed
//! video counts only when every injected type is identified and nothing
//! extra is flagged), one-vs-rest F1 per attack type, and localization
//! accuracy over true-positive detections. Depends only on report and
//! verdict shapes, never on pipeline internals.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::bench::GroundTruth;
use crate::detector::EventTarget;
use crate::error::{Error, Result};
use crate::graph::{AttackType, NodeSetId};
use crate::pipeline::{FrameReport, TrackStatus, VideoVerdict};

/// Output of one detection session, as the harness consumes it.
#[derive(Debug, Clone)]
pub struct VideoResult {
    pub verdict: VideoVerdict,
    pub reports: Vec<FrameReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct TypeMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl TypeMetrics {
    fn finish(mut self) -> Self {
        // Vacuous cases score perfect rather than undefined.
        self.precision = if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        };
        self.recall = if self.tp + self.fn_ == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        };
        let denom = 2 * self.tp + self.fp + self.fn_;
        self.f1 = if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        };
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryAccuracy {
    pub category: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct LocalizationSummary {
    /// True-positive detections with a judged target.
    pub considered: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub videos: usize,
    pub overall_accuracy: f64,
    pub per_category: Vec<CategoryAccuracy>,
    pub per_type: BTreeMap<AttackType, TypeMetrics>,
    pub localization: LocalizationSummary,
    /// Truth category to verdict label set to count.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

pub fn label_set_name(labels: &BTreeSet<AttackType>) -> String {
    if labels.is_empty() {
        "clean".to_string()
    } else {
        labels
            .iter()
            .map(|t| t.label().to_string())
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Majority mapping from track ids to generator object indices, recovered
/// from the per-frame status lines (local ids follow the `obj<k>` scheme).
pub fn track_object_map(reports: &[FrameReport]) -> BTreeMap<NodeSetId, usize> {
    let mut counts: BTreeMap<NodeSetId, BTreeMap<usize, usize>> = BTreeMap::new();
    for report in reports {
        for status in &report.sets {
            if matches!(status.status, TrackStatus::Absent) {
                continue;
            }
            let Some(local) = &status.node else { continue };
            let Some(idx) = local.strip_prefix("obj").and_then(|s| s.parse::<usize>().ok())
            else {
                continue;
            };
            *counts.entry(status.id).or_default().entry(idx).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .filter_map(|(id, by_obj)| {
            by_obj
                .into_iter()
                .max_by_key(|&(_, c)| c)
                .map(|(obj, _)| (id, obj))
        })
        .collect()
}

/// Score aligned result/truth lists.
pub fn evaluate(results: &[VideoResult], truths: &[GroundTruth]) -> Result<EvalSummary> {
    if results.len() != truths.len() {
        return Err(Error::EvalMismatch(format!(
            "{} results vs {} truths",
            results.len(),
            truths.len()
        )));
    }
    let mut overall_correct = 0usize;
    let mut per_category: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut per_type: BTreeMap<AttackType, TypeMetrics> = AttackType::ALL
        .iter()
        .map(|&t| (t, TypeMetrics::default()))
        .collect();
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut localization = LocalizationSummary::default();

    for (result, truth) in results.iter().zip(truths) {
        let truth_set: BTreeSet<AttackType> = truth.video_labels.iter().copied().collect();
        let verdict_set: BTreeSet<AttackType> = result.verdict.types.iter().copied().collect();
        let category = label_set_name(&truth_set);
        let entry = per_category.entry(category.clone()).or_default();
        entry.1 += 1;
        let exact = truth_set == verdict_set;
        if exact {
            entry.0 += 1;
            overall_correct += 1;
        }
        *confusion
            .entry(category)
            .or_default()
            .entry(label_set_name(&verdict_set))
            .or_default() += 1;

        for &attack in &AttackType::ALL {
            let in_truth = truth_set.contains(&attack);
            let in_verdict = verdict_set.contains(&attack);
            let metrics = per_type.get_mut(&attack).expect("all types present");
            match (in_truth, in_verdict) {
                (true, true) => metrics.tp += 1,
                (false, true) => metrics.fp += 1,
                (true, false) => metrics.fn_ += 1,
                (false, false) => metrics.tn += 1,
            }
        }

        // Localization over true positives: the first event of the detected
        // type must target a track that maps to an attacked object.
        let mapping = track_object_map(&result.reports);
        for attack in truth_set.intersection(&verdict_set) {
            let first_event = result
                .reports
                .iter()
                .flat_map(|r| r.events.iter())
                .find(|e| e.attack_type == *attack);
            let Some(event) = first_event else { continue };
            localization.considered += 1;
            let hit = match event.target {
                EventTarget::NodeSet(id) => mapping
                    .get(&id)
                    .map(|obj| {
                        truth
                            .targets
                            .get(attack)
                            .map(|list| list.contains(obj))
                            .unwrap_or(false)
                    })
                    .unwrap_or(false),
                // Generator attacks target objects, not relations.
                EventTarget::EdgeSet(_) => false,
            };
            if hit {
                localization.correct += 1;
            }
        }
    }

    localization.accuracy = if localization.considered == 0 {
        1.0
    } else {
        localization.correct as f64 / localization.considered as f64
    };
    Ok(EvalSummary {
        videos: results.len(),
        overall_accuracy: if results.is_empty() {
            1.0
        } else {
            overall_correct as f64 / results.len() as f64
        },
        per_category: per_category
            .into_iter()
            .map(|(category, (correct, total))| CategoryAccuracy {
                category,
                correct,
                total,
                accuracy: correct as f64 / total.max(1) as f64,
            })
            .collect(),
        per_type: per_type
            .into_iter()
            .map(|(t, m)| (t, m.finish()))
            .collect(),
        localization,
        confusion,
    })
}

impl EvalSummary {
    pub fn category_accuracy(&self, category: &str) -> Option<f64> {
        self.per_category
            .iter()
            .find(|c| c.category == category)
            .map(|c| c.accuracy)
    }
}

impl fmt::Display for EvalSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "videos: {}", self.videos)?;
        writeln!(
            f,
            "overall accuracy (exact label set): {:.1}%",
            100.0 * self.overall_accuracy
        )?;
        writeln!(f, "{:<18} {:>8} {:>8} {:>9}", "category", "correct", "total", "accuracy")?;
        for c in &self.per_category {
            writeln!(
                f,
                "{:<18} {:>8} {:>8} {:>8.1}%",
                c.category,
                c.correct,
                c.total,
                100.0 * c.accuracy
            )?;
        }
        writeln!(
            f,
            "{:<10} {:>4} {:>4} {:>4} {:>4} {:>10} {:>8} {:>8}",
            "type", "tp", "fp", "fn", "tn", "precision", "recall", "f1"
        )?;
        for (t, m) in &self.per_type {
            writeln!(
                f,
                "{:<10} {:>4} {:>4} {:>4} {:>4} {:>9.1}% {:>7.1}% {:>7.3}",
                t.label(),
                m.tp,
                m.fp,
                m.fn_,
                m.tn,
                100.0 * m.precision,
                100.0 * m.recall,
                m.f1
            )?;
        }
        writeln!(
            f,
            "localization: {}/{} = {:.1}%",
            self.localization.correct,
            self.localization.considered,
            100.0 * self.localization.accuracy
        )
    }
}
