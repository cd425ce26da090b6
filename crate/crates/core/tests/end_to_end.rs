use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uavtrack_core::assoc::{run_sequence, TrackerConfig};
use uavtrack_core::io::trajectories_to_mot;
use uavtrack_core::metrics::{evaluate, EvalConfig, MetricsReport};
use uavtrack_core::synth::{corrupt, generate_scene, gt_ids, random_prototypes, CorruptionConfig, SceneConfig};

const MIN_MOTA: f64 = 0.90;
const MIN_IDF1: f64 = 0.85;

fn run(seed: u64, corruption: CorruptionConfig, dim: usize) -> MetricsReport {
    let scene = SceneConfig {
        seed,
        ..SceneConfig::default()
    };
    let gt = generate_scene(&scene).unwrap();
    let protos = random_prototypes(&gt_ids(&gt), dim, &mut ChaCha8Rng::seed_from_u64(seed + 2));
    let dets = corrupt(&gt, &corruption, &protos).unwrap();
    let frames: Vec<_> = (1..=scene.num_frames)
        .map(|f| dets.get(&f).cloned().unwrap_or_default())
        .collect();
    let out = run_sequence(&frames, &TrackerConfig::default()).unwrap();
    evaluate(&gt, &trajectories_to_mot(&out), &EvalConfig::default())
}

#[test]
fn noisy_scenes_clear_the_tracking_thresholds() {
    for dim in [16, 128] {
        for seed in 0..5 {
            let r = run(
                seed,
                CorruptionConfig {
                    seed: seed + 1,
                    ..CorruptionConfig::default()
                },
                dim,
            );
            let mota = r.mota.unwrap();
            println!(
                "dim {dim} seed {seed}: MOTA {mota:.4} IDF1 {:.4} IDS {} FP {} FN {}",
                r.idf1, r.ids, r.fp, r.fn_
            );
            assert!(mota >= MIN_MOTA && r.idf1 >= MIN_IDF1, "dim {dim} seed {seed}: {r:?}");
        }
    }
}

#[test]
fn clean_scenes_are_tracked_without_identity_switches() {
    for seed in 0..5 {
        let r = run(seed, CorruptionConfig::clean(seed + 1), 128);
        assert!(r.mota.unwrap() >= 0.99, "seed {seed}: {r:?}");
        assert_eq!(r.ids, 0, "seed {seed}");
    }
}
