//! Deterministic embedding provider. Fills missing vectors so the symbolic
//! engine runs without any neural model: each whitespace token hashes to a
//! seeded Gaussian vector, token vectors are averaged and unit-normalized.
//! Shared tokens therefore yield high cosine similarity, which is the only
//! semantic property the downstream statistics rely on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Embedding, Modality, PerceptionFrame};

/// Where embeddings come from. `Stub` derives any missing vector from the
/// record's text; `File` expects vectors in the input stream and only falls
/// back to text when one is absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMode {
    #[default]
    Stub,
    File,
}

/// Per-modality vector dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModalityDims {
    pub name: usize,
    pub desc: usize,
    pub feature: usize,
}

impl Default for ModalityDims {
    fn default() -> Self {
        ModalityDims {
            name: 32,
            desc: 64,
            feature: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub mode: EmbedMode,
    pub seed: u64,
    pub dims: ModalityDims,
}

impl ProviderConfig {
    pub fn dim(&self, m: Modality) -> usize {
        match m {
            Modality::Name => self.dims.name,
            Modality::Desc => self.dims.desc,
            Modality::Feature => self.dims.feature,
        }
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn modality_salt(m: Modality) -> u64 {
    match m {
        Modality::Name => 0x6e61_6d65,
        Modality::Desc => 0x6465_7363,
        Modality::Feature => 0x6665_6174,
    }
}

fn token_rng(token: &str, modality: Modality, seed: u64) -> ChaCha8Rng {
    let h = fnv1a64(token.as_bytes());
    let mixed = splitmix64(h ^ splitmix64(seed ^ modality_salt(modality)));
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Deterministically embed `text` into the given modality's space. Same
/// (text, modality, seed) always yields the identical unit vector.
pub fn embed_text(text: &str, modality: Modality, cfg: &ProviderConfig) -> Result<Embedding> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(Error::EmptyEmbeddingSource);
    }
    let dim = cfg.dim(modality);
    let mut acc = vec![0.0f64; dim];
    let mut tokens = 0usize;
    for token in trimmed.split_whitespace() {
        let lower = token.to_lowercase();
        let mut rng = token_rng(&lower, modality, cfg.seed);
        for slot in acc.iter_mut() {
            let x: f64 = StandardNormal.sample(&mut rng);
            *slot += x;
        }
        tokens += 1;
    }
    for slot in acc.iter_mut() {
        *slot /= tokens as f64;
    }
    Embedding::new(modality, acc).normalized()
}

fn check_dim(emb: &Embedding, cfg: &ProviderConfig) -> Result<()> {
    let expected = cfg.dim(emb.modality);
    if emb.dim() != expected {
        return Err(Error::DimensionMismatch {
            modality: emb.modality,
            expected,
            actual: emb.dim(),
        });
    }
    Ok(())
}

/// Resolve every missing embedding in a frame. Provided vectors are never
/// overwritten; their dimensions are checked against the session config.
/// The feature modality derives from the description text unless an
/// explicit vector is given.
pub fn resolve_frame(frame: &PerceptionFrame, cfg: &ProviderConfig) -> Result<PerceptionFrame> {
    let mut out = frame.clone();
    for node in out.nodes.iter_mut() {
        for modality in Modality::ALL {
            match node.embedding(modality) {
                Some(emb) => check_dim(emb, cfg)?,
                None => {
                    let source = match modality {
                        Modality::Name => &node.name_text,
                        Modality::Desc | Modality::Feature => &node.desc_text,
                    };
                    if source.trim().is_empty() {
                        return Err(match cfg.mode {
                            EmbedMode::Stub => Error::EmptyEmbeddingSource,
                            EmbedMode::File => Error::MissingVector {
                                id: node.local_id.clone(),
                                modality,
                            },
                        });
                    }
                    node.set_embedding(embed_text(source, modality, cfg)?);
                }
            }
        }
    }
    for (i, edge) in out.edges.iter_mut().enumerate() {
        match &edge.desc_emb {
            Some(emb) => check_dim(emb, cfg)?,
            None => {
                if edge.desc_text.trim().is_empty() {
                    return Err(match cfg.mode {
                        EmbedMode::Stub => Error::EmptyEmbeddingSource,
                        EmbedMode::File => Error::MissingVector {
                            id: format!("edges[{i}]"),
                            modality: Modality::Desc,
                        },
                    });
                }
                edge.desc_emb = Some(embed_text(&edge.desc_text, Modality::Desc, cfg)?);
            }
        }
    }
    Ok(out)
}
