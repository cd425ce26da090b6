use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uavtrack_core::assoc::{run_sequence, BBox, Detection, MatchStage, Tracker, TrackerConfig, TrajectorySet};
use uavtrack_core::metrics::{evaluate, AnnotatedBox, EvalConfig};
use uavtrack_core::FrameMap;

fn unit(i: usize, dim: usize) -> Vec<f32> {
    let mut v = vec![0.0; dim];
    v[i % dim] = 1.0;
    v
}

fn random_frame(rng: &mut ChaCha8Rng) -> Vec<Detection> {
    (0..rng.random_range(0..8))
        .map(|_| {
            let b = BBox::new(rng.random_range(0.0..200.0), rng.random_range(0.0..200.0), 30.0, 30.0);
            let e = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            Detection::new(b, rng.random_range(0.0..1.0), 1, e)
        })
        .collect()
}

fn as_boxes(t: &TrajectorySet) -> FrameMap<AnnotatedBox> {
    t.iter()
        .map(|(&f, v)| {
            (
                f,
                v.iter()
                    .map(|o| AnnotatedBox::new(f, o.track_id, o.bbox, o.class_id))
                    .collect(),
            )
        })
        .collect()
}

proptest! {
    #[test]
    fn steps_are_partial_injections_in_stage_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
        let tau = tracker.config().tau;
        let mut max_id = 0;
        for _ in 0..30 {
            let dets = random_frame(&mut rng);
            let step = tracker.associate_step(&dets).unwrap();
            let det_idx: BTreeSet<_> = step.matched.iter().map(|m| m.1).collect();
            let track_ids: BTreeSet<_> = step.matched.iter().map(|m| m.0).collect();
            prop_assert_eq!(det_idx.len(), step.matched.len());
            prop_assert_eq!(track_ids.len(), step.matched.len());
            for &(_, d, stage) in &step.matched {
                let high = dets[d].score >= tau;
                prop_assert_eq!(high, stage != MatchStage::LowConfidence);
            }
            for &id in &step.new_tracks {
                prop_assert!(id > max_id);
                max_id = id;
                prop_assert!(!track_ids.contains(&id));
            }
            for t in tracker.tracks() {
                prop_assert!(t.frames_since_update <= tracker.config().max_lost);
                prop_assert!((t.kstate.cov - t.kstate.cov.transpose()).abs().max() < 1e-9);
            }
        }
    }

    #[test]
    fn identical_inputs_give_identical_trajectories(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<_> = (0..20).map(|_| random_frame(&mut rng)).collect();
        let cfg = TrackerConfig { gate: f64::INFINITY, ..TrackerConfig::default() };
        let a = run_sequence(&frames, &cfg).unwrap();
        let b = run_sequence(&frames, &cfg).unwrap();
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}

#[test]
fn appearance_match_wins_over_low_confidence_duplicate() {
    let mut tracker = Tracker::new(TrackerConfig::default()).unwrap();
    let b = BBox::new(10.0, 10.0, 40.0, 40.0);
    tracker
        .associate_step(&[Detection::new(b, 0.9, 1, unit(0, 8))])
        .unwrap();
    let step = tracker
        .associate_step(&[
            Detection::new(b, 0.2, 1, unit(0, 8)),
            Detection::new(b, 0.9, 1, unit(0, 8)),
        ])
        .unwrap();
    assert_eq!(step.matched, vec![(1, 1, MatchStage::Appearance)]);
    assert!(step.new_tracks.is_empty());
}

#[test]
fn two_separated_targets_keep_their_identities() {
    let frames: Vec<Vec<Detection>> = (0..100)
        .map(|f| {
            let t = f64::from(f);
            vec![
                Detection::new(BBox::new(50.0 + 2.0 * t, 100.0, 30.0, 30.0), 0.9, 1, unit(0, 16)),
                Detection::new(
                    BBox::new(600.0 - 1.5 * t, 400.0 + 0.5 * t, 40.0, 25.0),
                    0.9,
                    1,
                    unit(1, 16),
                ),
            ]
        })
        .collect();
    let gt: FrameMap<AnnotatedBox> = frames
        .iter()
        .enumerate()
        .map(|(i, dets)| {
            let f = i as u32 + 1;
            (
                f,
                dets.iter()
                    .enumerate()
                    .map(|(k, d)| AnnotatedBox::new(f, k as i64 + 1, d.bbox, 1))
                    .collect(),
            )
        })
        .collect();
    let out = run_sequence(&frames, &TrackerConfig::default()).unwrap();
    let ids: BTreeSet<i64> = out.values().flatten().map(|o| o.track_id).collect();
    assert_eq!(ids.len(), 2);
    let r = evaluate(&gt, &as_boxes(&out), &EvalConfig::default());
    assert_eq!(r.ids, 0);
    assert_eq!(r.mota, Some(1.0));
}

#[test]
fn dropout_shorter_than_retention_keeps_the_id() {
    let b = |f: u32| BBox::new(100.0 + f64::from(f), 100.0, 30.0, 30.0);
    let frames: Vec<Vec<Detection>> = (0..60u32)
        .map(|f| {
            if (20..30).contains(&f) {
                vec![]
            } else {
                vec![Detection::new(b(f), 0.9, 1, unit(3, 8))]
            }
        })
        .collect();
    let out = run_sequence(&frames, &TrackerConfig::default()).unwrap();
    let ids: BTreeSet<i64> = out.values().flatten().map(|o| o.track_id).collect();
    assert_eq!(ids, BTreeSet::from([1]));
    assert_eq!(out.len(), 50);
}
