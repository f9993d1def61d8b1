//! Scratch tuning probe (temporary).

use cadar_core::bench::{generate, AttackPlan, ScenarioSpec};
use cadar_core::graph::AttackType;
use cadar_core::pipeline::{run_frames, SessionConfig, TraceOptions};

#[test]
#[ignore]
fn sweep() {
    for &(rank, frames, t0) in &[
        (24usize, 13u32, 12u32),
        (28, 14, 13),
        (32, 14, 13),
        (36, 14, 13),
        (32, 15, 14),
        (40, 15, 14),
    ] {
        // Null: 150 clean videos, count node-level mod events + tests.
        let mut false_events = 0usize;
        let mut tests = 0usize;
        for seed in 0..150u64 {
            let spec = ScenarioSpec {
                frames,
                jitter_rank: rank,
                seed: 30_000 + seed,
                ..Default::default()
            };
            let (fr, _) = generate(&spec).unwrap();
            let (reports, _) =
                run_frames(&fr, SessionConfig::default(), TraceOptions::default()).unwrap();
            for r in &reports {
                if r.timestep > 5 {
                    tests += 5 * 2;
                }
                false_events += r
                    .events
                    .iter()
                    .filter(|e| {
                        matches!(e.attack_type, AttackType::Text | AttackType::Visual)
                    })
                    .count();
            }
        }
        // Power: 150 attacked videos, text at t0.
        let mut detected = 0usize;
        let mut stats = Vec::new();
        for seed in 0..150u64 {
            let spec = ScenarioSpec {
                frames,
                jitter_rank: rank,
                seed: 60_000 + seed,
                attacks: vec![AttackPlan {
                    attack: AttackType::Text,
                    target: (seed % 5) as usize,
                    start: t0,
                    magnitude: 8.0,
                }],
                ..Default::default()
            };
            let (fr, _) = generate(&spec).unwrap();
            let (reports, _) =
                run_frames(&fr, SessionConfig::default(), TraceOptions::default()).unwrap();
            let hit = reports
                .iter()
                .find(|r| r.timestep == t0)
                .map(|r| {
                    r.events
                        .iter()
                        .any(|e| e.attack_type == AttackType::Text)
                })
                .unwrap_or(false);
            if hit {
                detected += 1;
            }
            if let Some(e) = reports
                .iter()
                .flat_map(|r| r.events.iter())
                .find(|e| e.attack_type == AttackType::Text && e.timestep == t0)
            {
                if let Some(s) = e.statistic {
                    stats.push(s / e.threshold.unwrap());
                }
            }
        }
        stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = stats.get(stats.len() / 2).copied().unwrap_or(0.0);
        println!(
            "rank={rank:2} T={frames} t0={t0}: null rate {:.5} ({false_events}/{tests}), power {:.3} ({detected}/150), median stat/thr {:.2}",
            false_events as f64 / tests as f64,
            detected as f64 / 150.0,
            med,
        );
    }
}
