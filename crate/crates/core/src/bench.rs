//! Synthetic scenario generator and attack injectors. Objects get stable
//! stub-embedded base vectors plus per-frame jitter confined to a fixed
//! low-rank subspace; attacks displace embeddings inside that subspace (so
//! magnitude is expressed in within-track noise units), drop high-importance
//! objects, or insert low-reasonability ones.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embed::{embed_text, splitmix64, ProviderConfig};
use crate::error::{Error, Result};
use crate::graph::{
    AttackType, EdgeRecord, Embedding, Modality, NodeRecord, PerceptionFrame,
};

/// Importance given to removal targets so the disappearance is detectable.
const REMOVAL_TARGET_IMPORTANCE: f64 = 0.9;
/// Importance threshold the removal heuristic assumes.
const PI_HIGH_CONTRACT: f64 = 0.7;
/// Reasonability given to inserted objects.
const ADDITION_REASONABILITY: f64 = -2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackPlan {
    pub attack: AttackType,
    /// Object index; additions name the inserted object's index, which must
    /// extend the base range contiguously.
    pub target: usize,
    /// First attacked frame, in [1, frames].
    pub start: u32,
    /// Displacement in units of the within-track jitter std.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub n_objects: usize,
    pub frames: u32,
    /// Embedding jitter std per subspace coordinate, pre-normalization.
    pub noise: f64,
    pub scalar_jitter: f64,
    /// Rank of the per-object jitter subspace.
    pub jitter_rank: usize,
    pub attacks: Vec<AttackPlan>,
    pub seed: u64,
    /// Per-object importance overrides, keyed by object index.
    pub importance_overrides: BTreeMap<usize, f64>,
    pub embedding: ProviderConfig,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            name: "scenario".into(),
            n_objects: 5,
            frames: 13,
            noise: 0.04,
            scalar_jitter: 0.02,
            jitter_rank: 24,
            attacks: Vec::new(),
            seed: 0,
            importance_overrides: BTreeMap::new(),
            embedding: ProviderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameTruthEntry {
    pub attack: AttackType,
    pub target: usize,
}

/// What the generator actually injected, for scoring detector output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GroundTruth {
    /// Distinct attack types present in the video, sorted.
    pub video_labels: Vec<AttackType>,
    /// Frame-by-frame labels with target object indices.
    pub per_frame: BTreeMap<u32, Vec<FrameTruthEntry>>,
    /// Attacked object indices per type.
    pub targets: BTreeMap<AttackType, Vec<usize>>,
    /// Object names by index, inserted objects included.
    pub objects: Vec<String>,
}

const ADJECTIVES: [&str; 14] = [
    "amber", "teal", "crimson", "gray", "cobalt", "ivory", "olive", "rusty", "pale", "dark",
    "striped", "matte", "broad", "narrow",
];
const NOUNS: [&str; 14] = [
    "valve", "gauge", "ladder", "crate", "sign", "cone", "panel", "switch", "meter", "barrel",
    "rail", "lamp", "hatch", "pylon",
];

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tag)))
}

fn tag(parts: &[u64]) -> u64 {
    let mut acc = 0xa076_1d64_78bd_642f_u64;
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}

fn normal_vec<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            g
        })
        .collect()
}

/// Orthonormal basis of a random subspace, columns length `dim`.
fn random_basis<R: Rng>(rng: &mut R, dim: usize, rank: usize) -> Vec<Vec<f64>> {
    let rank = rank.min(dim.saturating_sub(1)).max(1);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rank);
    while basis.len() < rank {
        let mut v = normal_vec(rng, dim);
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= proj * bi;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for x in v.iter_mut() {
                *x /= norm;
            }
            basis.push(v);
        }
    }
    basis
}

fn apply_basis(basis: &[Vec<f64>], coords: &[f64]) -> Vec<f64> {
    let dim = basis[0].len();
    let mut out = vec![0.0; dim];
    for (b, &c) in basis.iter().zip(coords) {
        for (o, &bi) in out.iter_mut().zip(b) {
            *o += c * bi;
        }
    }
    out
}

fn clamp(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

struct ObjectModel {
    name: String,
    desc: String,
    probability: f64,
    importance: f64,
    reasonability: f64,
    bases: BTreeMap<Modality, Vec<Vec<f64>>>,
    base_embs: BTreeMap<Modality, Vec<f64>>,
}

fn modality_tag(m: Modality) -> u64 {
    match m {
        Modality::Name => 1,
        Modality::Desc => 2,
        Modality::Feature => 3,
    }
}

/// Jitter coordinates for (object, modality, frame); deterministic in the
/// spec seed regardless of evaluation order.
fn jitter_coords(spec: &ScenarioSpec, obj: usize, m: Modality, t: u32, rank: usize) -> Vec<f64> {
    let mut rng = stream(
        spec.seed,
        tag(&[3, obj as u64, modality_tag(m), t as u64]),
    );
    normal_vec(&mut rng, rank)
}

fn validate_spec(spec: &ScenarioSpec) -> Result<()> {
    if spec.n_objects == 0 {
        return Err(Error::Scenario("n_objects must be positive".into()));
    }
    if spec.frames == 0 {
        return Err(Error::Scenario("frames must be positive".into()));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Scenario(format!("invalid noise {}", spec.noise)));
    }
    if spec.jitter_rank < 2 {
        return Err(Error::Scenario("jitter_rank must be at least 2".into()));
    }
    let mut additions: Vec<usize> = Vec::new();
    for plan in &spec.attacks {
        if plan.start < 1 || plan.start > spec.frames {
            return Err(Error::Scenario(format!(
                "attack frame {} outside [1, {}]",
                plan.start, spec.frames
            )));
        }
        if !(plan.magnitude >= 0.0 && plan.magnitude.is_finite()) {
            return Err(Error::Scenario(format!(
                "attack magnitude must be finite and non-negative, got {}",
                plan.magnitude
            )));
        }
        match plan.attack {
            AttackType::Addition => {
                if plan.target < spec.n_objects {
                    return Err(Error::Scenario(format!(
                        "addition target {} collides with a base object",
                        plan.target
                    )));
                }
                additions.push(plan.target);
            }
            _ => {
                if plan.target >= spec.n_objects {
                    return Err(Error::Scenario(format!(
                        "attack target {} does not exist (n_objects = {})",
                        plan.target, spec.n_objects
                    )));
                }
            }
        }
        if plan.attack == AttackType::Removal {
            if let Some(&pi) = spec.importance_overrides.get(&plan.target) {
                if pi < PI_HIGH_CONTRACT {
                    return Err(Error::Scenario(format!(
                        "removal target {} has importance {pi} below {PI_HIGH_CONTRACT}; \
                         undetectable by construction",
                        plan.target
                    )));
                }
            }
        }
    }
    additions.sort_unstable();
    additions.dedup();
    for (i, &t) in additions.iter().enumerate() {
        if t != spec.n_objects + i {
            return Err(Error::Scenario(format!(
                "addition targets must extend the object range contiguously \
                 (expected {}, got {t})",
                spec.n_objects + i
            )));
        }
    }
    Ok(())
}

fn build_objects(spec: &ScenarioSpec, total: usize) -> Result<Vec<ObjectModel>> {
    let mut name_rng = stream(spec.seed, tag(&[0]));
    let mut combos: Vec<(usize, usize)> = (0..ADJECTIVES.len())
        .flat_map(|a| (0..NOUNS.len()).map(move |n| (a, n)))
        .collect();
    // Seeded shuffle so every object draws a distinct pair.
    for i in (1..combos.len()).rev() {
        let j = (name_rng.random::<u64>() % (i as u64 + 1)) as usize;
        combos.swap(i, j);
    }
    let removal_targets: Vec<usize> = spec
        .attacks
        .iter()
        .filter(|p| p.attack == AttackType::Removal)
        .map(|p| p.target)
        .collect();
    let addition_targets: Vec<usize> = spec
        .attacks
        .iter()
        .filter(|p| p.attack == AttackType::Addition)
        .map(|p| p.target)
        .collect();

    let mut objects = Vec::with_capacity(total);
    for idx in 0..total {
        let (a, n) = combos[idx % combos.len()];
        let name = format!("{} {}", ADJECTIVES[a], NOUNS[n]);
        let desc = format!(
            "the {} {} fixed near station {} of the scene",
            ADJECTIVES[a], NOUNS[n], idx
        );
        let mut scalar_rng = stream(spec.seed, tag(&[1, idx as u64]));
        let probability = 0.70 + 0.25 * scalar_rng.random::<f64>();
        let mut importance = 0.30 + 0.30 * scalar_rng.random::<f64>();
        if removal_targets.contains(&idx) {
            importance = REMOVAL_TARGET_IMPORTANCE;
        }
        if let Some(&pi) = spec.importance_overrides.get(&idx) {
            importance = pi;
        }
        let reasonability = if addition_targets.contains(&idx) {
            ADDITION_REASONABILITY
        } else {
            1.0 + 1.5 * scalar_rng.random::<f64>()
        };
        let mut bases = BTreeMap::new();
        let mut base_embs = BTreeMap::new();
        for m in Modality::ALL {
            let source = if m == Modality::Name { &name } else { &desc };
            base_embs.insert(m, embed_text(source, m, &spec.embedding)?.values);
            let mut basis_rng = stream(spec.seed, tag(&[2, idx as u64, modality_tag(m)]));
            bases.insert(
                m,
                random_basis(&mut basis_rng, spec.embedding.dim(m), spec.jitter_rank),
            );
        }
        objects.push(ObjectModel {
            name,
            desc,
            probability,
            importance,
            reasonability,
            bases,
            base_embs,
        });
    }
    Ok(objects)
}

/// Displacement direction for one modification plan: the normalized
/// difference of the target's first two jitter draws, so the direction is
/// isotropic yet guaranteed to lie inside the track's own variation span.
fn attack_direction(spec: &ScenarioSpec, obj: usize, m: Modality, basis: &[Vec<f64>]) -> Vec<f64> {
    let rank = basis.len();
    let g1 = jitter_coords(spec, obj, m, 1, rank);
    let g2 = jitter_coords(spec, obj, m, 2, rank);
    let coords: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a - b).collect();
    let dir = apply_basis(basis, &coords);
    let norm: f64 = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    dir.iter().map(|x| x / norm.max(1e-12)).collect()
}

/// Generate the frame stream and its ground truth for one scenario.
pub fn generate(spec: &ScenarioSpec) -> Result<(Vec<PerceptionFrame>, GroundTruth)> {
    validate_spec(spec)?;
    let addition_count = spec
        .attacks
        .iter()
        .filter(|p| p.attack == AttackType::Addition)
        .count();
    let total = spec.n_objects + addition_count;
    let objects = build_objects(spec, total)?;

    // Modification displacement vectors, fixed per (plan, modality).
    let mut displacements: BTreeMap<(usize, Modality), Vec<f64>> = BTreeMap::new();
    for (pi, plan) in spec.attacks.iter().enumerate() {
        let modality = match plan.attack {
            AttackType::Text => Modality::Desc,
            AttackType::Visual => Modality::Feature,
            _ => continue,
        };
        let basis = &objects[plan.target].bases[&modality];
        let dir = attack_direction(spec, plan.target, modality, basis);
        let scale = plan.magnitude * spec.noise;
        displacements.insert((pi, modality), dir.iter().map(|x| x * scale).collect());
    }

    let mut truth = GroundTruth {
        objects: objects.iter().map(|o| o.name.clone()).collect(),
        ..Default::default()
    };
    let mut frames = Vec::with_capacity(spec.frames as usize);

    for t in 1..=spec.frames {
        let mut present: Vec<usize> = Vec::new();
        for idx in 0..total {
            let removed = spec.attacks.iter().any(|p| {
                p.attack == AttackType::Removal && p.target == idx && t >= p.start
            });
            let added = idx >= spec.n_objects;
            let inserted = spec.attacks.iter().any(|p| {
                p.attack == AttackType::Addition && p.target == idx && t >= p.start
            });
            if removed || (added && !inserted) {
                continue;
            }
            present.push(idx);
        }

        let mut nodes = Vec::with_capacity(present.len());
        for &idx in &present {
            let obj = &objects[idx];
            let mut scalar_rng = stream(spec.seed, tag(&[4, idx as u64, t as u64]));
            let mut noisy = |base: f64, lo: f64, hi: f64| {
                let g: f64 = StandardNormal.sample(&mut scalar_rng);
                clamp(base + spec.scalar_jitter * g, lo, hi)
            };
            let probability = noisy(obj.probability, 0.0, 1.0);
            let importance = noisy(obj.importance, 0.0, 1.0);
            let reasonability = noisy(obj.reasonability, -3.0, 3.0);

            let mut embs: BTreeMap<Modality, Embedding> = BTreeMap::new();
            for m in Modality::ALL {
                let basis = &obj.bases[&m];
                let coords = jitter_coords(spec, idx, m, t, basis.len());
                let jitter = apply_basis(basis, &coords);
                let mut values: Vec<f64> = obj.base_embs[&m]
                    .iter()
                    .zip(&jitter)
                    .map(|(b, j)| b + spec.noise * j)
                    .collect();
                for (pi, plan) in spec.attacks.iter().enumerate() {
                    if plan.target != idx || t < plan.start {
                        continue;
                    }
                    if let Some(disp) = displacements.get(&(pi, m)) {
                        for (v, d) in values.iter_mut().zip(disp) {
                            *v += d;
                        }
                    }
                }
                embs.insert(m, Embedding::new(m, values).normalized()?);
            }
            nodes.push(NodeRecord {
                local_id: format!("obj{idx}"),
                timestep: t,
                name_text: obj.name.clone(),
                desc_text: obj.desc.clone(),
                name_emb: embs.remove(&Modality::Name),
                desc_emb: embs.remove(&Modality::Desc),
                feat_emb: embs.remove(&Modality::Feature),
                probability,
                importance,
                reasonability,
                attack_flag: None,
                bbox: None,
            });
        }

        // Relation chain over the objects present in this frame. The
        // relation phrasing is constant per pair, so its stub embedding is
        // too; the provider fills it at resolve time.
        let mut edges = Vec::new();
        for pair in present.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            edges.push(EdgeRecord {
                source: format!("obj{a}"),
                target: format!("obj{b}"),
                timestep: t,
                desc_text: format!("{} beside {}", objects[a].name, objects[b].name),
                desc_emb: None,
                importance: 0.0, // resolved below from endpoint means
                attack_flag: None,
            });
        }
        for edge in edges.iter_mut() {
            let find = |id: &str| nodes.iter().find(|n| n.local_id == id).map(|n| n.importance);
            if let (Some(a), Some(b)) = (find(&edge.source), find(&edge.target)) {
                edge.importance = (a + b) / 2.0;
            }
        }

        for plan in &spec.attacks {
            if t >= plan.start {
                truth
                    .per_frame
                    .entry(t)
                    .or_default()
                    .push(FrameTruthEntry {
                        attack: plan.attack,
                        target: plan.target,
                    });
            }
        }

        frames.push(PerceptionFrame {
            timestep: t,
            context: spec.name.clone(),
            nodes,
            edges,
            source_image_ref: None,
        });
    }

    for plan in &spec.attacks {
        let list = truth.targets.entry(plan.attack).or_default();
        if !list.contains(&plan.target) {
            list.push(plan.target);
        }
    }
    truth.video_labels = truth.targets.keys().copied().collect();
    Ok((frames, truth))
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteCounts {
    pub text: usize,
    pub visual: usize,
    pub removal: usize,
    pub addition: usize,
    pub mixed: usize,
    pub clean: usize,
}

impl Default for SuiteCounts {
    fn default() -> Self {
        SuiteCounts {
            text: 40,
            visual: 40,
            removal: 40,
            addition: 40,
            mixed: 20,
            clean: 20,
        }
    }
}

impl SuiteCounts {
    pub fn total(&self) -> usize {
        self.text + self.visual + self.removal + self.addition + self.mixed + self.clean
    }
}

/// A whole benchmark suite; expands into one scenario per video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSpec {
    pub name: String,
    pub seed: u64,
    pub counts: SuiteCounts,
    pub n_objects: usize,
    pub frames: u32,
    pub noise: f64,
    pub scalar_jitter: f64,
    pub jitter_rank: usize,
    pub magnitude: f64,
    pub attack_frame: u32,
    pub embedding: ProviderConfig,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            name: "default".into(),
            seed: 7,
            counts: SuiteCounts::default(),
            n_objects: 5,
            frames: 13,
            noise: 0.04,
            scalar_jitter: 0.02,
            jitter_rank: 24,
            magnitude: 8.0,
            attack_frame: 12,
            embedding: ProviderConfig::default(),
        }
    }
}

impl SuiteSpec {
    /// Expand into `(category, scenario)` pairs with derived seeds.
    pub fn expand(&self) -> Vec<(String, ScenarioSpec)> {
        let mut out = Vec::with_capacity(self.counts.total());
        let mut video = 0u64;
        let categories: [(&str, usize); 6] = [
            ("text", self.counts.text),
            ("visual", self.counts.visual),
            ("removal", self.counts.removal),
            ("addition", self.counts.addition),
            ("mixed", self.counts.mixed),
            ("clean", self.counts.clean),
        ];
        for (category, count) in categories {
            for i in 0..count {
                let target = i % self.n_objects;
                let attacks = match category {
                    "text" => vec![AttackPlan {
                        attack: AttackType::Text,
                        target,
                        start: self.attack_frame,
                        magnitude: self.magnitude,
                    }],
                    "visual" => vec![AttackPlan {
                        attack: AttackType::Visual,
                        target,
                        start: self.attack_frame,
                        magnitude: self.magnitude,
                    }],
                    "removal" => vec![AttackPlan {
                        attack: AttackType::Removal,
                        target,
                        start: self.attack_frame,
                        magnitude: self.magnitude,
                    }],
                    "addition" => vec![AttackPlan {
                        attack: AttackType::Addition,
                        target: self.n_objects,
                        start: self.attack_frame,
                        magnitude: self.magnitude,
                    }],
                    "mixed" => vec![
                        AttackPlan {
                            attack: AttackType::Text,
                            target,
                            start: self.attack_frame,
                            magnitude: self.magnitude,
                        },
                        AttackPlan {
                            attack: AttackType::Visual,
                            target,
                            start: self.attack_frame,
                            magnitude: self.magnitude,
                        },
                    ],
                    _ => vec![],
                };
                let seed = splitmix64(self.seed ^ splitmix64(0x5eed_0000 + video));
                out.push((
                    category.to_string(),
                    ScenarioSpec {
                        name: format!("{}-{category}-{i:03}", self.name),
                        n_objects: self.n_objects,
                        frames: self.frames,
                        noise: self.noise,
                        scalar_jitter: self.scalar_jitter,
                        jitter_rank: self.jitter_rank,
                        attacks,
                        seed,
                        importance_overrides: BTreeMap::new(),
                        embedding: self.embedding,
                    },
                ));
                video += 1;
            }
        }
        out
    }
}

/// On-disk index of a generated suite; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub category: String,
    pub stream: String,
    pub truth: String,
    pub spec: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub videos: Vec<ManifestEntry>,
}
