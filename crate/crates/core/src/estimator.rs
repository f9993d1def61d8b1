//! State estimation. Each attribute of a freshly matched, unflagged node is
//! treated as a particle and refined by weighted multinomial resampling
//! over the track's clean history: Gaussian weights for scalars, softmax of
//! scaled cosine similarity for embeddings. The resampled state, not the
//! raw observation, is what enters the clean reference set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::splitmix64;
use crate::error::{Error, Result};
use crate::graph::{Embedding, Modality, NodeRecord, NodeSet, NodeSetId};
use crate::matcher::cosine_sim;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Disable to store raw observations as the clean state.
    pub enabled: bool,
    /// Floor on the scalar weight bandwidth.
    pub sigma_min: f64,
    pub lambda_name: f64,
    pub lambda_desc: f64,
    pub lambda_feature: f64,
    /// Resampling needs at least this many clean references.
    pub min_refs: usize,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            enabled: true,
            sigma_min: 0.05,
            lambda_name: 10.0,
            lambda_desc: 10.0,
            lambda_feature: 10.0,
            min_refs: 5,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn lambda(&self, m: Modality) -> f64 {
        match m {
            Modality::Name => self.lambda_name,
            Modality::Desc => self.lambda_desc,
            Modality::Feature => self.lambda_feature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_min <= 0.0 {
            return Err(Error::Config(format!(
                "sigma_min must be positive: {}",
                self.sigma_min
            )));
        }
        for m in Modality::ALL {
            if self.lambda(m) <= 0.0 {
                return Err(Error::Config(format!(
                    "lambda_{m} must be positive: {}",
                    self.lambda(m)
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic per-attribute stream: one session seed split by
/// (track, timestep, attribute), so estimation order never matters.
pub fn attribute_rng(seed: u64, set: NodeSetId, timestep: u32, attribute: u8) -> ChaCha8Rng {
    let tag = (set.0 << 16) ^ ((timestep as u64) << 8) ^ attribute as u64;
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tag)))
}

fn multinomial_indices<R: Rng>(weights: &[f64], draws: usize, rng: &mut R) -> Vec<usize> {
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cumulative.push(acc);
    }
    let total = acc.max(f64::MIN_POSITIVE);
    (0..draws)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * total;
            cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(weights.len() - 1)
        })
        .collect()
}

fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n)
        .max(0.0)
        .sqrt()
}

/// Normalized weights from exponent scores, with max-shift so extreme
/// scores cannot underflow to an all-zero vector.
fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone)]
pub struct ScalarResample {
    pub value: f64,
    pub weights: Vec<f64>,
    pub indices: Vec<usize>,
}

/// Resample a scalar attribute against its reference values: Gaussian
/// weights around the observation with bandwidth max(std(refs), sigma_min),
/// M multinomial draws, estimate = mean of the drawn values.
pub fn resample_scalar<R: Rng>(
    a_star: f64,
    refs: &[f64],
    sigma_min: f64,
    rng: &mut R,
) -> ScalarResample {
    let m = refs.len();
    debug_assert!(m >= 1);
    let sigma = population_std(refs).max(sigma_min);
    let scores: Vec<f64> = refs
        .iter()
        .map(|a| -((a - a_star) * (a - a_star)) / (2.0 * sigma * sigma))
        .collect();
    let weights = softmax(&scores);
    let indices = multinomial_indices(&weights, m, rng);
    let value = indices.iter().map(|&i| refs[i]).sum::<f64>() / m as f64;
    ScalarResample {
        value,
        weights,
        indices,
    }
}

#[derive(Debug, Clone)]
pub struct EmbeddingResample {
    pub embedding: Embedding,
    pub weights: Vec<f64>,
    pub indices: Vec<usize>,
    /// True when the resampled sum cancelled and the observation was kept.
    pub fell_back: bool,
}

/// Resample an embedding attribute: weights are the softmax of
/// lambda * cos(ref, observation), M multinomial draws, estimate = the
/// unit-normalized vector sum of the drawn references.
pub fn resample_embedding<R: Rng>(
    m_star: &Embedding,
    refs: &[&Embedding],
    lambda: f64,
    rng: &mut R,
) -> Result<EmbeddingResample> {
    let m = refs.len();
    debug_assert!(m >= 1);
    let mut scores = Vec::with_capacity(m);
    for r in refs {
        scores.push(lambda * cosine_sim(r, m_star)?);
    }
    let weights = softmax(&scores);
    let indices = multinomial_indices(&weights, m, rng);
    let mut acc = vec![0.0f64; m_star.dim()];
    for &i in &indices {
        for (a, v) in acc.iter_mut().zip(&refs[i].values) {
            *a += v;
        }
    }
    let sum = Embedding::new(m_star.modality, acc);
    let (embedding, fell_back) = match sum.normalized() {
        Ok(e) => (e, false),
        // Antipodal cancellation: fall back to the observation.
        Err(Error::DegenerateEmbedding) => (m_star.normalized()?, true),
        Err(e) => return Err(e),
    };
    Ok(EmbeddingResample {
        embedding,
        weights,
        indices,
        fell_back,
    })
}

/// The estimated node state stored for one track at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatedNode {
    pub source: NodeSetId,
    pub record: NodeRecord,
}

/// Per-attribute resampling detail for the trace stream.
#[derive(Debug, Clone, Serialize)]
pub struct AttributeTrace {
    pub attribute: &'static str,
    pub weights: Vec<f64>,
    pub indices: Vec<usize>,
    pub fallback: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimationTrace {
    pub set: NodeSetId,
    #[serde(rename = "t")]
    pub timestep: u32,
    /// True when the clean history was too short and the raw node was kept.
    pub skipped: bool,
    pub attributes: Vec<AttributeTrace>,
}

const SCALAR_ATTRS: [(&str, u8); 3] = [("probability", 0), ("importance", 1), ("reasonability", 2)];

fn modality_attr(m: Modality) -> (&'static str, u8) {
    match m {
        Modality::Name => ("name", 3),
        Modality::Desc => ("desc", 4),
        Modality::Feature => ("feature", 5),
    }
}

/// Estimate a freshly matched, unflagged node from its track's clean
/// history. With fewer than `min_refs` references the observation is kept
/// verbatim; otherwise every scalar and embedding attribute is resampled
/// independently on its own deterministic stream.
pub fn estimate_node(
    node: &NodeRecord,
    set: &NodeSet,
    cfg: &EstimatorConfig,
) -> Result<(EstimatedNode, EstimationTrace)> {
    cfg.validate()?;
    debug_assert!(node.attack_flag.is_none());
    let refs: Vec<&NodeRecord> = set.clean_states().collect();
    let m = refs.len();
    let mut trace = EstimationTrace {
        set: set.id,
        timestep: node.timestep,
        skipped: m < cfg.min_refs,
        attributes: Vec::new(),
    };
    if trace.skipped {
        return Ok((
            EstimatedNode {
                source: set.id,
                record: node.clone(),
            },
            trace,
        ));
    }

    let mut record = node.clone();
    for (name, tag) in SCALAR_ATTRS {
        let (star, values): (f64, Vec<f64>) = match tag {
            0 => (node.probability, refs.iter().map(|r| r.probability).collect()),
            1 => (node.importance, refs.iter().map(|r| r.importance).collect()),
            _ => (
                node.reasonability,
                refs.iter().map(|r| r.reasonability).collect(),
            ),
        };
        let mut rng = attribute_rng(cfg.seed, set.id, node.timestep, tag);
        let out = resample_scalar(star, &values, cfg.sigma_min, &mut rng);
        match tag {
            0 => record.probability = out.value,
            1 => record.importance = out.value,
            _ => record.reasonability = out.value,
        }
        trace.attributes.push(AttributeTrace {
            attribute: name,
            weights: out.weights,
            indices: out.indices,
            fallback: false,
        });
    }
    for modality in Modality::ALL {
        let (name, tag) = modality_attr(modality);
        let star = node.require_embedding(modality)?;
        let ref_embs: Vec<&Embedding> = refs
            .iter()
            .map(|r| r.require_embedding(modality))
            .collect::<Result<_>>()?;
        let mut rng = attribute_rng(cfg.seed, set.id, node.timestep, tag);
        let out = resample_embedding(star, &ref_embs, cfg.lambda(modality), &mut rng)?;
        record.set_embedding(out.embedding);
        trace.attributes.push(AttributeTrace {
            attribute: name,
            weights: out.weights,
            indices: out.indices,
            fallback: out.fell_back,
        });
    }
    Ok((
        EstimatedNode {
            source: set.id,
            record,
        },
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn degenerate_scalar_references_return_their_value() {
        let refs = vec![0.8; 7];
        let out = resample_scalar(0.3, &refs, 0.05, &mut rng(1));
        assert!((out.value - 0.8).abs() < 1e-12);
    }

    #[test]
    fn scalar_weights_are_normalized() {
        let refs = vec![0.2, 0.4, 0.55, 0.8, 0.9];
        let out = resample_scalar(0.6, &refs, 0.05, &mut rng(2));
        let total: f64 = out.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_spread_references_clamp_bandwidth_to_sigma_min() {
        // All refs identical: std = 0, so weights must reflect the
        // sigma_min bandwidth: two distinct refs would then separate by
        // exp(-d^2 / (2 sigma_min^2)). Verify via the weight on a far ref.
        let refs = vec![0.8, 0.8, 0.8, 0.8];
        let out = resample_scalar(0.8, &refs, 0.05, &mut rng(3));
        // Uniform weights over identical refs.
        for w in &out.weights {
            assert!((w - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_monte_carlo_mean_matches_analytic_expectation() {
        // refs {0.2, 0.8}, observation 0.8. Population std is 0.3, so
        // w(0.2) proportional to exp(-0.36/0.18) = e^-2.
        let refs = vec![0.2, 0.8];
        let w_far = (-2.0f64).exp();
        let w = [w_far / (1.0 + w_far), 1.0 / (1.0 + w_far)];
        let analytic = 0.2 * w[0] + 0.8 * w[1];
        let mut total = 0.0;
        let trials = 100_000;
        let mut r = rng(4);
        for _ in 0..trials {
            total += resample_scalar(0.8, &refs, 0.05, &mut r).value;
        }
        let mc = total / trials as f64;
        assert!(
            (mc - analytic).abs() < 0.01,
            "monte carlo {mc} vs analytic {analytic}"
        );
    }

    #[test]
    fn scalar_support_stays_within_references() {
        let refs = vec![0.1, 0.5, 0.9];
        for seed in 0..20 {
            let out = resample_scalar(0.7, &refs, 0.05, &mut rng(seed));
            for &i in &out.indices {
                assert!(refs.contains(&refs[i]));
            }
            let lo = 0.1;
            let hi = 0.9;
            assert!(out.value >= lo && out.value <= hi);
        }
    }

    fn emb(values: &[f64]) -> Embedding {
        Embedding::new(Modality::Desc, values.to_vec())
    }

    #[test]
    fn degenerate_embedding_references_return_their_direction() {
        let u = emb(&[0.6, 0.8]);
        let refs = vec![&u, &u, &u, &u, &u];
        let star = emb(&[1.0, 0.0]);
        let out = resample_embedding(&star, &refs, 10.0, &mut rng(5)).unwrap();
        assert!((out.embedding.values[0] - 0.6).abs() < 1e-12);
        assert!((out.embedding.values[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn uniform_similarities_give_exactly_uniform_weights() {
        // Orthogonal refs all at cosine 0 to the observation.
        let r1 = emb(&[1.0, 0.0, 0.0]);
        let r2 = emb(&[0.0, 1.0, 0.0]);
        let star = emb(&[0.0, 0.0, 1.0]);
        let out = resample_embedding(&star, &[&r1, &r2], 10.0, &mut rng(6)).unwrap();
        assert!((out.weights[0] - 0.5).abs() < 1e-12);
        assert!((out.weights[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn embedding_weights_match_closed_form_softmax() {
        // cos = 0.9 and 0.1 at lambda 10: weight ratio e^8.
        let a = 0.9f64;
        let b = 0.1f64;
        let r1 = emb(&[a, (1.0 - a * a).sqrt(), 0.0]);
        let r2 = emb(&[b, (1.0 - b * b).sqrt(), 0.0]);
        let star = emb(&[1.0, 0.0, 0.0]);
        let out = resample_embedding(&star, &[&r1, &r2], 10.0, &mut rng(7)).unwrap();
        let ratio = out.weights[0] / out.weights[1];
        assert!((ratio.ln() - 8.0).abs() < 1e-9);
        // The resampled mean is overwhelmingly the closer reference.
        let cos_to_r1 = out.embedding.dot(&r1);
        assert!(cos_to_r1 > 0.99);
        let total: f64 = out.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn antipodal_cancellation_falls_back_to_observation() {
        let r1 = emb(&[1.0, 0.0]);
        let r2 = emb(&[-1.0, 0.0]);
        let star = emb(&[0.0, 1.0]);
        // Force cancellation: with equal weights, an even split can sum to
        // zero; sweep seeds until the fallback path triggers.
        let mut hit = false;
        for seed in 0..200 {
            let out = resample_embedding(&star, &[&r1, &r2], 0.0001, &mut rng(seed)).unwrap();
            if out.fell_back {
                assert_eq!(out.embedding.values, vec![0.0, 1.0]);
                hit = true;
                break;
            }
        }
        assert!(hit, "cancellation never produced a fallback");
    }

    fn node_with_scalars(t: u32, p: f64, pi: f64, rho: f64, dir: &[f64]) -> NodeRecord {
        NodeRecord {
            local_id: "n".into(),
            timestep: t,
            name_text: "n".into(),
            desc_text: "n".into(),
            name_emb: Some(Embedding::new(Modality::Name, dir.to_vec())),
            desc_emb: Some(Embedding::new(Modality::Desc, dir.to_vec())),
            feat_emb: Some(Embedding::new(Modality::Feature, dir.to_vec())),
            probability: p,
            importance: pi,
            reasonability: rho,
            attack_flag: None,
            bbox: None,
        }
    }

    fn track_with_clean(states: Vec<NodeRecord>) -> NodeSet {
        let mut set = NodeSet::spawn(NodeSetId(3), states[0].clone());
        for (i, s) in states.iter().enumerate() {
            if i > 0 {
                set.members.push(s.clone());
            }
            set.clean.push(crate::graph::CleanMember {
                member_index: i,
                state: s.clone(),
            });
        }
        set
    }

    #[test]
    fn short_history_returns_node_verbatim() {
        let states: Vec<NodeRecord> = (1..=3)
            .map(|t| node_with_scalars(t, 0.9, 0.5, 1.0, &[1.0, 0.0]))
            .collect();
        let set = track_with_clean(states);
        let node = node_with_scalars(9, 0.77, 0.41, 0.3, &[0.8, 0.6]);
        let (est, trace) = estimate_node(&node, &set, &EstimatorConfig::default()).unwrap();
        assert!(trace.skipped);
        assert_eq!(est.record, node);
    }

    #[test]
    fn identical_history_pins_estimate_to_reference() {
        let states: Vec<NodeRecord> = (1..=8)
            .map(|t| node_with_scalars(t, 0.9, 0.5, 1.0, &[1.0, 0.0]))
            .collect();
        let set = track_with_clean(states);
        let noisy = node_with_scalars(9, 0.7, 0.3, -0.5, &[0.6, 0.8]);
        let (est, trace) = estimate_node(&noisy, &set, &EstimatorConfig::default()).unwrap();
        assert!(!trace.skipped);
        assert!((est.record.probability - 0.9).abs() < 1e-12);
        assert!((est.record.importance - 0.5).abs() < 1e-12);
        assert!((est.record.reasonability - 1.0).abs() < 1e-12);
        for m in Modality::ALL {
            let e = est.record.embedding(m).unwrap();
            assert!((e.values[0] - 1.0).abs() < 1e-12);
            assert!(e.values[1].abs() < 1e-12);
        }
    }

    #[test]
    fn estimation_is_deterministic_for_a_fixed_seed() {
        let states: Vec<NodeRecord> = (1..=8)
            .map(|t| {
                node_with_scalars(
                    t,
                    0.8 + 0.01 * t as f64,
                    0.5,
                    1.0,
                    &[1.0, 0.02 * t as f64],
                )
            })
            .collect();
        let set = track_with_clean(states);
        let node = node_with_scalars(9, 0.83, 0.52, 1.1, &[1.0, 0.1]);
        let cfg = EstimatorConfig {
            seed: 42,
            ..Default::default()
        };
        let (a, _) = estimate_node(&node, &set, &cfg).unwrap();
        let (b, _) = estimate_node(&node, &set, &cfg).unwrap();
        assert_eq!(a.record, b.record);
    }

    #[test]
    fn estimate_contracts_toward_reference_mean() {
        let refs = vec![0.2, 0.35, 0.5, 0.6, 0.75, 0.9];
        let mean = refs.iter().sum::<f64>() / refs.len() as f64;
        let max_dev = refs
            .iter()
            .map(|r| (r - mean).abs())
            .fold(0.0f64, f64::max);
        for seed in 0..50 {
            let out = resample_scalar(0.95, &refs, 0.05, &mut rng(seed));
            assert!((out.value - mean).abs() <= max_dev + 1e-12);
        }
    }

    #[test]
    fn outlier_reference_is_damped_below_unweighted_mean() {
        // Nine clean references near 0.5 and one outlier far away: the
        // expected resampled value sits strictly closer to the clean mean
        // than the unweighted mean of all ten references.
        let mut refs: Vec<f64> = (0..9).map(|i| 0.5 + 0.01 * (i as f64 - 4.0)).collect();
        let clean_mean = refs.iter().sum::<f64>() / 9.0;
        refs.push(0.5 + 10.0 * 0.05); // outlier at 10 sigma_min
        let all_mean = refs.iter().sum::<f64>() / 10.0;
        let mut total = 0.0;
        let trials = 20_000;
        let mut r = rng(11);
        for _ in 0..trials {
            total += resample_scalar(0.5, &refs, 0.05, &mut r).value;
        }
        let expected = total / trials as f64;
        assert!(
            (expected - clean_mean).abs() < (all_mean - clean_mean).abs(),
            "expected {expected} not closer to clean mean {clean_mean} than {all_mean}"
        );
    }
}
