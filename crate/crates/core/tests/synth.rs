use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uavtrack_core::synth::{
    corrupt, generate_scene, gt_ids, random_prototypes, render_maps, sample_training_pair, CorruptionConfig, MapLayout,
    SceneConfig,
};

fn prototypes(
    gt: &uavtrack_core::FrameMap<uavtrack_core::metrics::AnnotatedBox>,
    dim: usize,
    seed: u64,
) -> BTreeMap<i64, Vec<f32>> {
    random_prototypes(&gt_ids(gt), dim, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn miss_and_false_positive_rates_match_configuration() {
    let scene = SceneConfig {
        num_targets: 60,
        ..SceneConfig::default()
    };
    let gt = generate_scene(&scene).unwrap();
    let n_gt: usize = gt.values().map(Vec::len).sum();
    assert!(n_gt >= 10_000, "{n_gt} boxes");
    let protos = prototypes(&gt, 8, 5);

    let misses = CorruptionConfig {
        fp_rate: 0.0,
        ..CorruptionConfig::default()
    };
    let kept: usize = corrupt(&gt, &misses, &protos).unwrap().values().map(Vec::len).sum();
    let miss = 1.0 - kept as f64 / n_gt as f64;
    assert!((miss - misses.miss_rate).abs() <= 0.02, "miss rate {miss}");

    let fps = CorruptionConfig {
        miss_rate: 0.0,
        ..CorruptionConfig::default()
    };
    let total: usize = corrupt(&gt, &fps, &protos).unwrap().values().map(Vec::len).sum();
    let fp = (total - n_gt) as f64 / n_gt as f64;
    assert!((fp - fps.fp_rate).abs() <= 0.02, "false-positive rate {fp}");
}

#[test]
fn clean_corruption_reproduces_ground_truth() {
    let gt = generate_scene(&SceneConfig {
        num_frames: 30,
        ..SceneConfig::default()
    })
    .unwrap();
    let protos = prototypes(&gt, 16, 9);
    let dets = corrupt(&gt, &CorruptionConfig::clean(3), &protos).unwrap();
    for (f, boxes) in &gt {
        let d = &dets[f];
        assert_eq!(d.len(), boxes.len());
        for (b, det) in boxes.iter().zip(d) {
            assert_eq!(det.bbox, b.bbox);
            let p = &protos[&b.id];
            let cos: f64 = p
                .iter()
                .zip(&det.embedding)
                .map(|(&x, &y)| f64::from(x) * f64::from(y))
                .sum();
            assert!((cos - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn rendered_maps_have_unit_peaks_at_centres() {
    let layout = MapLayout::default();
    let (w, h) = layout.image_size();
    let scene = SceneConfig {
        num_targets: 6,
        num_frames: 5,
        image_w: w,
        image_h: h,
        box_size_range: [8.0, 20.0],
        num_classes: 2,
        ..SceneConfig::default()
    };
    let gt = generate_scene(&scene).unwrap();
    let protos = prototypes(&gt, layout.embed_dim, 1);
    for boxes in gt.values() {
        let maps = render_maps(boxes, &protos, &layout).unwrap();
        assert!(maps.hm.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(maps.fm.values().iter().all(|&v| (0.0..1.0).contains(&v)));
        for (b, &(y, x)) in boxes.iter().zip(&maps.reg.centers) {
            assert_eq!(maps.hm.get((b.class_id - 1) as usize, y, x), 1.0);
        }
        for o in &maps.reg.offsets {
            assert!(o.iter().all(|v| (0.0..1.0).contains(v)));
        }
    }
}

proptest! {
    #[test]
    fn generation_is_deterministic(seed in any::<u64>()) {
        let scene = SceneConfig { num_frames: 20, seed, ..SceneConfig::default() };
        let gt = generate_scene(&scene).unwrap();
        prop_assert_eq!(&gt, &generate_scene(&scene).unwrap());
        let protos = prototypes(&gt, 8, seed);
        let cfg = CorruptionConfig { seed, ..CorruptionConfig::default() };
        prop_assert_eq!(corrupt(&gt, &cfg, &protos).unwrap(), corrupt(&gt, &cfg, &protos).unwrap());
    }

    #[test]
    fn every_frame_is_present_and_ids_are_unique(seed in any::<u64>()) {
        let scene = SceneConfig { num_frames: 25, seed, ..SceneConfig::default() };
        let gt = generate_scene(&scene).unwrap();
        prop_assert_eq!(gt.keys().copied().collect::<Vec<_>>(), (1..=25).collect::<Vec<_>>());
        for boxes in gt.values() {
            let mut ids: Vec<_> = boxes.iter().map(|b| b.id).collect();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), boxes.len());
            prop_assert!(boxes.iter().all(|b| b.bbox.is_valid()));
        }
    }

    #[test]
    fn detection_embeddings_are_unit_norm(seed in any::<u64>()) {
        let gt = generate_scene(&SceneConfig { num_frames: 10, seed, ..SceneConfig::default() }).unwrap();
        let dets = corrupt(&gt, &CorruptionConfig { seed, ..CorruptionConfig::default() }, &prototypes(&gt, 32, seed)).unwrap();
        for d in dets.values().flatten() {
            let n: f64 = d.embedding.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-3);
            prop_assert!((0.0..=1.0).contains(&d.score));
        }
    }

    #[test]
    fn training_pairs_are_ordered_and_close(seed in any::<u64>(), max_interval in 1usize..10) {
        let gt = generate_scene(&SceneConfig { num_frames: 30, seed, ..SceneConfig::default() }).unwrap();
        let (a, b) = sample_training_pair(&gt, max_interval, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(a < b && (b - a) as usize <= max_interval);
    }
}
