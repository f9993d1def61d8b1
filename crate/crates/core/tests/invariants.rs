//! Property tests for the engine's structural invariants.

use proptest::prelude::*;

use cadar_core::bench::{generate, AttackPlan, ScenarioSpec};
use cadar_core::estimator::{resample_embedding, resample_scalar};
use cadar_core::graph::{
    AttackType, EdgeRecord, Embedding, Modality, NodeRecord, PerceptionFrame,
};
use cadar_core::io::{frame_to_line, parse_frame};
use cadar_core::pipeline::{Session, SessionConfig, TraceOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn embedding_strategy(m: Modality, dim: usize) -> impl Strategy<Value = Embedding> {
    prop::collection::vec(-1.0f64..1.0, dim..=dim)
        .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-6))
        .prop_map(move |v| Embedding::new(m, v))
}

fn node_strategy(index: usize) -> impl Strategy<Value = NodeRecord> {
    (
        embedding_strategy(Modality::Name, 4),
        embedding_strategy(Modality::Desc, 6),
        embedding_strategy(Modality::Feature, 5),
        0.0f64..1.0,
        0.0f64..1.0,
        -3.0f64..3.0,
        prop::option::of(prop::array::uniform4(0.0f64..100.0)),
    )
        .prop_map(move |(name, desc, feat, p, pi, rho, bbox)| NodeRecord {
            local_id: format!("n{index}"),
            timestep: 1,
            name_text: format!("name {index}"),
            desc_text: format!("desc {index}"),
            name_emb: Some(name),
            desc_emb: Some(desc),
            feat_emb: Some(feat),
            probability: p,
            importance: pi,
            reasonability: rho,
            attack_flag: None,
            bbox,
        })
}

fn frame_strategy() -> impl Strategy<Value = PerceptionFrame> {
    (1usize..=4)
        .prop_flat_map(|n| {
            let nodes: Vec<_> = (0..n).map(node_strategy).collect();
            (nodes, prop::collection::vec(0usize..n * n, 0..4))
        })
        .prop_map(|(nodes, edge_picks)| {
            let n = nodes.len();
            let mut edges = Vec::new();
            for pick in edge_picks {
                let a = pick % n;
                let b = pick / n % n;
                if a == b {
                    continue;
                }
                edges.push(EdgeRecord {
                    source: format!("n{a}"),
                    target: format!("n{b}"),
                    timestep: 1,
                    desc_text: format!("n{a} near n{b}"),
                    desc_emb: Some(Embedding::new(Modality::Desc, vec![0.1; 6])),
                    importance: (nodes[a].importance + nodes[b].importance) / 2.0,
                    attack_flag: None,
                });
            }
            PerceptionFrame {
                timestep: 1,
                context: "prop".into(),
                nodes,
                edges,
                source_image_ref: None,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frame_serialization_round_trips_field_exact(frame in frame_strategy()) {
        let line = frame_to_line(&frame).unwrap();
        let parsed = parse_frame(&line).unwrap();
        prop_assert_eq!(frame, parsed);
    }

    #[test]
    fn scalar_resampling_invariants(
        refs in prop::collection::vec(0.0f64..1.0, 1..12),
        a_star in 0.0f64..1.0,
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = resample_scalar(a_star, &refs, 0.05, &mut rng);
        // Weight normalization.
        let total: f64 = out.weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        // Support containment: every draw indexes a reference.
        prop_assert!(out.indices.iter().all(|&i| i < refs.len()));
        // Contraction: the estimate never leaves the reference hull, so it
        // is no farther from the reference mean than the farthest reference.
        let mean = refs.iter().sum::<f64>() / refs.len() as f64;
        let max_dev = refs.iter().map(|r| (r - mean).abs()).fold(0.0, f64::max);
        prop_assert!((out.value - mean).abs() <= max_dev + 1e-12);
    }

    #[test]
    fn embedding_resampling_invariants(
        dirs in prop::collection::vec(0.0f64..std::f64::consts::TAU, 1..10),
        star_dir in 0.0f64..std::f64::consts::TAU,
        seed in 0u64..1000,
    ) {
        let refs: Vec<Embedding> = dirs
            .iter()
            .map(|&a| Embedding::new(Modality::Desc, vec![a.cos(), a.sin()]))
            .collect();
        let ref_refs: Vec<&Embedding> = refs.iter().collect();
        let star = Embedding::new(Modality::Desc, vec![star_dir.cos(), star_dir.sin()]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = resample_embedding(&star, &ref_refs, 10.0, &mut rng).unwrap();
        let total: f64 = out.weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(out.indices.iter().all(|&i| i < refs.len()));
        prop_assert!((out.embedding.norm() - 1.0).abs() < 1e-9);
    }
}

/// Clean-reference hygiene holds after every pipeline step, even on attacked
/// streams, and flagged members never re-enter the reference sets.
#[test]
fn clean_references_stay_hygienic_under_attack() {
    for seed in 0..10 {
        let spec = ScenarioSpec {
            frames: 13,
            attacks: vec![
                AttackPlan {
                    attack: AttackType::Text,
                    target: 1,
                    start: 8,
                    magnitude: 8.0,
                },
                AttackPlan {
                    attack: AttackType::Addition,
                    target: 5,
                    start: 9,
                    magnitude: 1.0,
                },
            ],
            seed,
            ..Default::default()
        };
        let (frames, _) = generate(&spec).unwrap();
        let mut session = Session::new(SessionConfig::default(), TraceOptions::default()).unwrap();
        for frame in &frames {
            session.process_frame(frame).unwrap();
            for set in session.state().node_sets.values() {
                assert!(set.clean_is_hygienic(), "flagged member inside clean set");
            }
        }
    }
}

/// With pairwise-disjoint candidate sets, node input order cannot change
/// the assignment. Track ids follow spawn order, so the comparison is on
/// the induced partition of observations, not on raw ids.
#[test]
fn disjoint_candidates_make_assignment_order_independent() {
    let spec = ScenarioSpec {
        frames: 6,
        ..Default::default()
    };
    let (frames, _) = generate(&spec).unwrap();

    let run = |permute: bool| {
        let mut session = Session::new(SessionConfig::default(), TraceOptions::default()).unwrap();
        let mut groups: std::collections::BTreeMap<cadar_core::NodeSetId, Vec<(u32, String)>> =
            std::collections::BTreeMap::new();
        for frame in &frames {
            let mut frame = frame.clone();
            frame.edges.clear();
            if permute {
                frame.nodes.reverse();
            }
            let report = session.process_frame(&frame).unwrap();
            for status in report.sets {
                if let Some(node) = status.node {
                    groups
                        .entry(status.id)
                        .or_default()
                        .push((frame.timestep, node));
                }
            }
        }
        let mut partition: Vec<Vec<(u32, String)>> = groups
            .into_values()
            .map(|mut members| {
                members.sort();
                members
            })
            .collect();
        partition.sort();
        partition
    };
    assert_eq!(run(false), run(true));
}
