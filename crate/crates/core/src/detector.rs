//! Attack detectors. Text and visual modifications are flagged by fitting a
//! PCA-Gaussian reference model on a track's clean history and testing the
//! squared Mahalanobis distance of the new observation against a chi-square
//! quantile. Removal and addition are flagged by two-frame temporal
//! heuristics over track activity, importance, and reasonability.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::graph::{
    AttackType, EdgeRecord, EdgeSet, Embedding, GraphSet, Modality, NodeRecord, NodeSet,
    NodeSetId,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Significance level of the chi-square test.
    pub alpha: f64,
    /// Fraction of variance the PCA projection must retain.
    pub variance_target: f64,
    /// Importance threshold above which a vanished track raises a removal.
    pub pi_high: f64,
    /// Reasonability threshold at or below which a fresh track raises an
    /// addition.
    pub rho_low: f64,
    /// Minimum clean references for a statistical test; below it the fit
    /// falls back to an identity projection.
    pub min_clean_for_pca: usize,
    /// Ridge scale: epsilon = ridge_scale * trace(cov) / k.
    pub ridge_scale: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            alpha: 0.01,
            variance_target: 0.99,
            pi_high: 0.7,
            rho_low: 0.0,
            min_clean_for_pca: 4,
            ridge_scale: 1e-6,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha out of (0, 1): {}", self.alpha)));
        }
        if !(self.variance_target > 0.0 && self.variance_target <= 1.0) {
            return Err(Error::Config(format!(
                "variance_target out of (0, 1]: {}",
                self.variance_target
            )));
        }
        Ok(())
    }
}

/// Per-track, per-modality Gaussian reference over the PCA-projected clean
/// members.
#[derive(Debug, Clone)]
pub struct ReferenceModel {
    pub modality: Modality,
    /// k x d projection; rows are principal directions.
    pub projection: DMatrix<f64>,
    pub centroid: DVector<f64>,
    /// Ridge-regularized covariance of the projected references.
    pub covariance: DMatrix<f64>,
    pub sample_count: usize,
    pub retained_variance: f64,
    chol: Cholesky<f64, Dyn>,
}

impl ReferenceModel {
    /// Degrees of freedom of the projected space.
    pub fn dof(&self) -> usize {
        self.centroid.len()
    }

    pub fn project(&self, emb: &Embedding) -> Result<DVector<f64>> {
        if emb.dim() != self.projection.ncols() {
            return Err(Error::DimensionMismatch {
                modality: self.modality,
                expected: self.projection.ncols(),
                actual: emb.dim(),
            });
        }
        let x = DVector::from_column_slice(&emb.values);
        Ok(&self.projection * x)
    }
}

/// Sorted (descending) eigenpairs of the centered sample covariance. For
/// wide data (d > n) the Gram-matrix route gives the same non-null pairs at
/// a fraction of the cost.
fn sample_eigenpairs(rows: &[&[f64]]) -> (Vec<f64>, Vec<DVector<f64>>, DVector<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = DVector::zeros(d);
    for row in rows {
        mean += DVector::from_column_slice(row);
    }
    mean /= n as f64;
    let mut centered = DMatrix::zeros(n, d);
    for (i, row) in rows.iter().enumerate() {
        for j in 0..d {
            centered[(i, j)] = row[j] - mean[j];
        }
    }
    let denom = (n - 1) as f64;
    let (values, mut vectors): (Vec<f64>, Vec<DVector<f64>>) = if d <= n {
        let cov = centered.transpose() * &centered / denom;
        let eig = cov.symmetric_eigen();
        let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let vecs: Vec<DVector<f64>> = (0..d)
            .map(|j| DVector::from(eig.eigenvectors.column(j).clone_owned()))
            .collect();
        (vals, vecs)
    } else {
        let gram = &centered * centered.transpose() / denom;
        let eig = gram.symmetric_eigen();
        let mut vals = Vec::new();
        let mut vecs = Vec::new();
        for j in 0..n {
            let lambda = eig.eigenvalues[j];
            if lambda <= 1e-12 {
                continue;
            }
            let u = eig.eigenvectors.column(j);
            let mut v = centered.transpose() * u;
            v /= (lambda * denom).sqrt();
            vals.push(lambda);
            vecs.push(v);
        }
        (vals, vecs)
    };
    // Sort descending, drop negative round-off, canonicalize sign so the
    // largest-magnitude component is positive.
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    let mut sorted_vals = Vec::with_capacity(order.len());
    let mut sorted_vecs = Vec::with_capacity(order.len());
    for idx in order {
        sorted_vals.push(values[idx].max(0.0));
        let mut v = std::mem::replace(&mut vectors[idx], DVector::zeros(0));
        let pivot = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[pivot] < 0.0 {
            v = -v;
        }
        sorted_vecs.push(v);
    }
    (sorted_vals, sorted_vecs, mean)
}

fn sample_cov(rows: &[DVector<f64>], mean: &DVector<f64>) -> DMatrix<f64> {
    let k = mean.len();
    let mut cov = DMatrix::zeros(k, k);
    for row in rows {
        let diff = row - mean;
        cov += &diff * diff.transpose();
    }
    cov / (rows.len() - 1) as f64
}

/// Fit the Gaussian reference model on the clean members' embeddings of one
/// modality. With at least `min_clean_for_pca` references a PCA retaining
/// `variance_target` of the variance is applied first (dimensions capped at
/// n - 1); below that the projection is the identity and only the diagonal
/// of the covariance is kept. The covariance gains a trace-scaled ridge.
pub fn fit_reference(clean: &[&Embedding], cfg: &DetectorConfig) -> Result<ReferenceModel> {
    cfg.validate()?;
    let n = clean.len();
    if n < 2 {
        return Err(Error::InsufficientReference(n));
    }
    let modality = clean[0].modality;
    let d = clean[0].dim();
    for emb in clean {
        if emb.modality != modality {
            return Err(Error::ModalityMismatch {
                left: modality,
                right: emb.modality,
            });
        }
        if emb.dim() != d {
            return Err(Error::DimensionMismatch {
                modality,
                expected: d,
                actual: emb.dim(),
            });
        }
    }
    let rows: Vec<&[f64]> = clean.iter().map(|e| e.values.as_slice()).collect();

    let (projection, retained_variance, diagonal_cov) = if n >= cfg.min_clean_for_pca {
        let (values, vectors, _mean) = sample_eigenpairs(&rows);
        let total: f64 = values.iter().sum();
        let cap = (n - 1).min(d).max(1);
        let k = if total <= 1e-300 {
            1
        } else {
            let mut cum = 0.0;
            let mut k = cap;
            for (i, v) in values.iter().take(cap).enumerate() {
                cum += v;
                if cum / total >= cfg.variance_target {
                    k = i + 1;
                    break;
                }
            }
            k
        };
        let k = k.min(vectors.len()).max(1);
        let retained = if total <= 1e-300 {
            1.0
        } else {
            values.iter().take(k).sum::<f64>() / total
        };
        let mut w = DMatrix::zeros(k, d);
        for (i, v) in vectors.iter().take(k).enumerate() {
            w.set_row(i, &v.transpose());
        }
        (w, retained, false)
    } else {
        (DMatrix::identity(d, d), 1.0, true)
    };

    let projected: Vec<DVector<f64>> = rows
        .iter()
        .map(|r| &projection * DVector::from_column_slice(r))
        .collect();
    let k = projection.nrows();
    let mut centroid = DVector::zeros(k);
    for z in &projected {
        centroid += z;
    }
    centroid /= n as f64;
    let mut covariance = sample_cov(&projected, &centroid);
    if diagonal_cov {
        let diag = covariance.diagonal();
        covariance = DMatrix::from_diagonal(&diag);
    }
    let epsilon = (cfg.ridge_scale * covariance.trace() / k as f64).max(1e-12);
    for i in 0..k {
        covariance[(i, i)] += epsilon;
    }
    let chol = Cholesky::new(covariance.clone())
        .ok_or_else(|| Error::Internal("reference covariance not positive definite".into()))?;
    Ok(ReferenceModel {
        modality,
        projection,
        centroid,
        covariance,
        sample_count: n,
        retained_variance,
        chol,
    })
}

/// Squared Mahalanobis distance of a projected vector from the reference
/// centroid, via the cached symmetric factorization (no explicit inverse).
pub fn mahalanobis_sq(z: &DVector<f64>, model: &ReferenceModel) -> Result<f64> {
    if z.len() != model.dof() {
        return Err(Error::DimensionMismatch {
            modality: model.modality,
            expected: model.dof(),
            actual: z.len(),
        });
    }
    let diff = z - &model.centroid;
    let solved = model.chol.solve(&diff);
    Ok(diff.dot(&solved).max(0.0))
}

/// Inverse CDF of the chi-square distribution with `k` degrees of freedom.
pub fn chi2_quantile(k: usize, prob: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::OutOfRange("chi-square dof must be >= 1".into()));
    }
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::OutOfRange(format!(
            "chi-square probability out of (0, 1): {prob}"
        )));
    }
    let dist = ChiSquared::new(k as f64)
        .map_err(|e| Error::Internal(format!("chi-square setup: {e}")))?;
    Ok(dist.inverse_cdf(prob))
}

/// Where an alarm points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventTarget {
    NodeSet(NodeSetId),
    EdgeSet([NodeSetId; 2]),
}

impl fmt::Display for EventTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventTarget::NodeSet(id) => write!(f, "node set {id}"),
            EventTarget::EdgeSet([a, b]) => write!(f, "edge set ({a}, {b})"),
        }
    }
}

/// One detection alarm. Statistical alarms carry the test statistic and its
/// threshold; structural alarms carry neither.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    #[serde(rename = "t")]
    pub timestep: u32,
    #[serde(rename = "type")]
    pub attack_type: AttackType,
    pub target: EventTarget,
    #[serde(rename = "stat", skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub detail: String,
}

/// Events plus skip notes for tests that could not run.
#[derive(Debug, Clone, Default)]
pub struct DetectOutcome {
    pub events: Vec<DetectionEvent>,
    pub notes: Vec<String>,
}

fn modification_kind(m: Modality) -> Option<AttackType> {
    match m {
        Modality::Desc => Some(AttackType::Text),
        Modality::Feature => Some(AttackType::Visual),
        Modality::Name => None,
    }
}

fn test_embedding(
    emb: &Embedding,
    refs: &[&Embedding],
    timestep: u32,
    target: EventTarget,
    cfg: &DetectorConfig,
) -> Result<Option<DetectionEvent>> {
    let model = fit_reference(refs, cfg)?;
    let z = model.project(emb)?;
    let stat = mahalanobis_sq(&z, &model)?;
    let threshold = chi2_quantile(model.dof(), 1.0 - cfg.alpha)?;
    if stat > threshold {
        let attack = modification_kind(emb.modality)
            .ok_or_else(|| Error::Internal("name modality has no attack class".into()))?;
        Ok(Some(DetectionEvent {
            timestep,
            attack_type: attack,
            target,
            statistic: Some(stat),
            threshold: Some(threshold),
            detail: format!(
                "{} mahalanobis^2 {:.3} > chi2[{}] {:.3} over {} clean refs",
                emb.modality,
                stat,
                model.dof(),
                threshold,
                model.sample_count
            ),
        }))
    } else {
        Ok(None)
    }
}

/// Test a freshly matched node against its track's clean reference models
/// in the description and feature modalities. Both tests can fire on one
/// node (a mixed modification). Tracks with fewer than `min_clean_for_pca`
/// clean references are skipped with a note.
pub fn detect_modification(
    node: &NodeRecord,
    set: &NodeSet,
    cfg: &DetectorConfig,
) -> Result<DetectOutcome> {
    let mut outcome = DetectOutcome::default();
    for modality in [Modality::Desc, Modality::Feature] {
        let refs: Vec<&Embedding> = set
            .clean_states()
            .map(|s| s.require_embedding(modality))
            .collect::<Result<_>>()?;
        if refs.len() < cfg.min_clean_for_pca.max(2) {
            outcome.notes.push(format!(
                "set {} {}: {} clean refs, below test minimum {}",
                set.id,
                modality,
                refs.len(),
                cfg.min_clean_for_pca.max(2)
            ));
            continue;
        }
        if let Some(event) = test_embedding(
            node.require_embedding(modality)?,
            &refs,
            node.timestep,
            EventTarget::NodeSet(set.id),
            cfg,
        )? {
            outcome.events.push(event);
        }
    }
    Ok(outcome)
}

/// The edge analogue of `detect_modification`, restricted to the
/// description modality edges carry.
pub fn detect_edge_modification(
    edge: &EdgeRecord,
    eset: &EdgeSet,
    cfg: &DetectorConfig,
) -> Result<DetectOutcome> {
    let mut outcome = DetectOutcome::default();
    let refs: Vec<&Embedding> = eset
        .clean_states()
        .filter(|e| e.timestep < edge.timestep)
        .map(|e| {
            e.desc_emb
                .as_ref()
                .ok_or_else(|| Error::MissingVector {
                    id: format!("{}->{}", e.source, e.target),
                    modality: Modality::Desc,
                })
        })
        .collect::<Result<_>>()?;
    if refs.len() < cfg.min_clean_for_pca.max(2) {
        outcome.notes.push(format!(
            "edge set ({}, {}): {} clean refs, below test minimum {}",
            eset.key.0,
            eset.key.1,
            refs.len(),
            cfg.min_clean_for_pca.max(2)
        ));
        return Ok(outcome);
    }
    let emb = edge.desc_emb.as_ref().ok_or_else(|| Error::MissingVector {
        id: format!("{}->{}", edge.source, edge.target),
        modality: Modality::Desc,
    })?;
    if let Some(event) = test_embedding(
        emb,
        &refs,
        edge.timestep,
        EventTarget::EdgeSet([eset.key.0, eset.key.1]),
        cfg,
    )? {
        outcome.events.push(event);
    }
    Ok(outcome)
}

/// Two-frame structural heuristics, run once per frame after matching.
///
/// Removal: a track whose clean history carries high importance and that
/// failed to match at both `t` and `t - 1` raises one alarm per
/// disappearance episode (re-armed by a later match).
///
/// Addition: a track first seen at `t` or `t - 1` whose spawn-time
/// reasonability is at or below the threshold raises one alarm ever; its
/// spawning observation is flagged and scrubbed from the clean set.
pub fn detect_structural(state: &mut GraphSet, t: u32, cfg: &DetectorConfig) -> Vec<DetectionEvent> {
    let mut events = Vec::new();
    for set in state.node_sets.values_mut() {
        // Removal window: unmatched at t and t-1 means the last match is at
        // or before t-2.
        if !set.removal_fired && t >= 2 && set.last_matched <= t - 2 {
            let pi = set.mean_importance();
            if pi >= cfg.pi_high {
                set.removal_fired = true;
                events.push(DetectionEvent {
                    timestep: t,
                    attack_type: AttackType::Removal,
                    target: EventTarget::NodeSet(set.id),
                    statistic: None,
                    threshold: None,
                    detail: format!(
                        "importance {:.2} track unmatched at t and t-1 (last match t={})",
                        pi, set.last_matched
                    ),
                });
            }
        }
    }
    let mut additions = Vec::new();
    for set in state.node_sets.values() {
        if !set.addition_fired
            && set.first_seen + 1 >= t
            && set.first_seen <= t
            && set.spawn_reasonability <= cfg.rho_low
        {
            additions.push(set.id);
        }
    }
    for id in additions {
        let set = state.node_sets.get_mut(&id).expect("known id");
        set.addition_fired = true;
        set.flag_member(0, AttackType::Addition);
        events.push(DetectionEvent {
            timestep: t,
            attack_type: AttackType::Addition,
            target: EventTarget::NodeSet(id),
            statistic: None,
            threshold: None,
            detail: format!(
                "track first seen t={} with spawn reasonability {:.2} <= {:.2}",
                set.first_seen, set.spawn_reasonability, cfg.rho_low
            ),
        });
    }
    events
}
