//! End-to-end runs of generated scenarios through the full pipeline.

use cadar_core::bench::{generate, AttackPlan, ScenarioSpec};
use cadar_core::detector::EventTarget;
use cadar_core::eval::track_object_map;
use cadar_core::graph::AttackType;
use cadar_core::pipeline::{run_frames, Session, SessionConfig, TraceOptions};

fn scenario(seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        seed,
        ..Default::default()
    }
}

#[test]
fn warm_up_gate_suppresses_an_early_attack() {
    // Attack lands at t = 2 inside an R = 3 warm-up window: silence there.
    let spec = ScenarioSpec {
        frames: 4,
        attacks: vec![AttackPlan {
            attack: AttackType::Text,
            target: 0,
            start: 2,
            magnitude: 8.0,
        }],
        ..scenario(5)
    };
    let (frames, _) = generate(&spec).unwrap();
    let mut cfg = SessionConfig::default();
    cfg.reference_frames = 3;
    let (reports, _) = run_frames(&frames, cfg, TraceOptions::default()).unwrap();
    assert!(reports[1].events.is_empty(), "no events during warm-up");
}

#[test]
fn text_attack_is_flagged_at_the_injection_frame_with_the_right_target() {
    // 8 sigma description shift at t = 6 with R = 5. The early test runs on
    // five references, so keep the jitter subspace small enough for power.
    let spec = ScenarioSpec {
        frames: 7,
        jitter_rank: 8,
        attacks: vec![AttackPlan {
            attack: AttackType::Text,
            target: 1,
            start: 6,
            magnitude: 8.0,
        }],
        ..scenario(21)
    };
    let (frames, truth) = generate(&spec).unwrap();
    let (reports, verdict) = run_frames(
        &frames,
        SessionConfig::default(),
        TraceOptions::default(),
    )
    .unwrap();
    let at_injection = &reports[5];
    assert_eq!(at_injection.timestep, 6);
    let event = at_injection
        .events
        .iter()
        .find(|e| e.attack_type == AttackType::Text)
        .expect("text event at the injection frame");
    let mapping = track_object_map(&reports);
    match event.target {
        EventTarget::NodeSet(id) => {
            assert_eq!(mapping[&id], truth.targets[&AttackType::Text][0])
        }
        EventTarget::EdgeSet(_) => panic!("expected a node target"),
    }
    assert!(verdict.types.contains(&AttackType::Text));
}

#[test]
fn clean_sequences_stay_silent_in_at_least_98_percent_of_runs() {
    let mut silent = 0;
    let runs = 100;
    for seed in 0..runs {
        let spec = ScenarioSpec {
            frames: 10,
            ..scenario(1000 + seed)
        };
        let (frames, _) = generate(&spec).unwrap();
        let (_, verdict) = run_frames(
            &frames,
            SessionConfig::default(),
            TraceOptions::default(),
        )
        .unwrap();
        if verdict.types.is_empty() {
            silent += 1;
        }
    }
    assert!(
        silent >= 98,
        "only {silent}/{runs} clean runs produced an empty verdict"
    );
}

#[test]
fn tracks_match_objects_one_to_one_on_clean_videos() {
    for seed in 0..30 {
        let spec = ScenarioSpec {
            frames: 12,
            ..scenario(2000 + seed)
        };
        let (frames, _) = generate(&spec).unwrap();
        let mut session = Session::new(SessionConfig::default(), TraceOptions::default()).unwrap();
        for frame in &frames {
            let report = session.process_frame(frame).unwrap();
            // One-to-one within the frame: every matched or spawned track
            // appears once.
            let mut seen = std::collections::BTreeSet::new();
            for status in report
                .sets
                .iter()
                .filter(|s| !matches!(s.status, cadar_core::pipeline::TrackStatus::Absent))
            {
                assert!(seen.insert(status.id), "track claimed twice in one frame");
            }
        }
        assert_eq!(
            session.state().node_sets.len(),
            spec.n_objects,
            "seed {seed}: track count diverged from object count"
        );
        assert_eq!(
            session.state().total_member_nodes(),
            session.state().total_frame_nodes()
        );
    }
}

#[test]
fn removal_fires_one_frame_after_the_drop_and_addition_at_insertion() {
    let spec = ScenarioSpec {
        frames: 10,
        scalar_jitter: 0.0,
        attacks: vec![
            AttackPlan {
                attack: AttackType::Removal,
                target: 2,
                start: 8,
                magnitude: 1.0,
            },
            AttackPlan {
                attack: AttackType::Addition,
                target: 5,
                start: 7,
                magnitude: 1.0,
            },
        ],
        ..scenario(31)
    };
    let (frames, _) = generate(&spec).unwrap();
    let (reports, verdict) = run_frames(
        &frames,
        SessionConfig::default(),
        TraceOptions::default(),
    )
    .unwrap();
    let removal_frames: Vec<u32> = reports
        .iter()
        .flat_map(|r| r.events.iter())
        .filter(|e| e.attack_type == AttackType::Removal)
        .map(|e| e.timestep)
        .collect();
    assert_eq!(removal_frames, vec![9], "one removal alarm, one frame late");
    let addition_frames: Vec<u32> = reports
        .iter()
        .flat_map(|r| r.events.iter())
        .filter(|e| e.attack_type == AttackType::Addition)
        .map(|e| e.timestep)
        .collect();
    assert_eq!(addition_frames, vec![7], "one addition alarm at insertion");
    assert_eq!(
        verdict.types,
        vec![AttackType::Removal, AttackType::Addition]
    );
}

#[test]
fn report_stream_is_deterministic_for_identical_input() {
    let spec = ScenarioSpec {
        frames: 9,
        attacks: vec![AttackPlan {
            attack: AttackType::Visual,
            target: 3,
            start: 7,
            magnitude: 8.0,
        }],
        ..scenario(77)
    };
    let (frames, _) = generate(&spec).unwrap();
    let trace = TraceOptions {
        matching: true,
        estimation: true,
    };
    let run = || {
        let (reports, verdict) = run_frames(&frames, SessionConfig::default(), trace).unwrap();
        let mut lines: Vec<String> = reports
            .iter()
            .map(|r| serde_json::to_string(r).unwrap())
            .collect();
        lines.push(serde_json::to_string(&verdict).unwrap());
        lines.join("\n")
    };
    assert_eq!(run(), run());
}

#[test]
fn mixed_attack_raises_both_types_on_one_track() {
    let target = 2usize;
    let spec = ScenarioSpec {
        frames: 13,
        attacks: vec![
            AttackPlan {
                attack: AttackType::Text,
                target,
                start: 12,
                magnitude: 8.0,
            },
            AttackPlan {
                attack: AttackType::Visual,
                target,
                start: 12,
                magnitude: 8.0,
            },
        ],
        ..scenario(404)
    };
    let (frames, _) = generate(&spec).unwrap();
    let (reports, verdict) = run_frames(
        &frames,
        SessionConfig::default(),
        TraceOptions::default(),
    )
    .unwrap();
    assert!(verdict.types.contains(&AttackType::Text));
    assert!(verdict.types.contains(&AttackType::Visual));
    let mapping = track_object_map(&reports);
    for attack in [AttackType::Text, AttackType::Visual] {
        let event = reports
            .iter()
            .flat_map(|r| r.events.iter())
            .find(|e| e.attack_type == attack)
            .expect("event present");
        match event.target {
            EventTarget::NodeSet(id) => assert_eq!(mapping[&id], target),
            EventTarget::EdgeSet(_) => panic!("expected node target"),
        }
    }
}
