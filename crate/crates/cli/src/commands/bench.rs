use std::time::{Duration, Instant};

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uavtrack_core::assoc::run_sequence;
use uavtrack_core::io::trajectories_to_mot;
use uavtrack_core::metrics::evaluate;
use uavtrack_core::synth::{corrupt, generate_scene};
use uavtrack_core::tdrm::{tdrm_forward, TdrmParams, DEFAULT_REDUCED_CHANNELS, DEFAULT_TOP_K};
use uavtrack_core::tebm::{tebm_forward, BoostInputs, TebmParams};
use uavtrack_core::tensor::FeatureMap;

use super::{load_config, prototypes_for, usage, CmdResult};
use crate::Common;

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Repetitions per stage; the median is reported.
    #[arg(long, default_value_t = 5)]
    repeat: usize,
    #[command(flatten)]
    common: Common,
}

fn median_of<T>(repeat: usize, mut f: impl FnMut() -> anyhow::Result<T>) -> anyhow::Result<Duration> {
    let mut times = Vec::with_capacity(repeat);
    for _ in 0..repeat {
        let t = Instant::now();
        std::hint::black_box(f()?);
        times.push(t.elapsed());
    }
    times.sort();
    Ok(times[times.len() / 2])
}

pub fn run(args: BenchArgs) -> CmdResult {
    if args.repeat == 0 {
        return Err(usage("--repeat must be at least 1"));
    }
    let cfg = load_config(&args.common)?;
    let r = args.repeat;

    let gt = generate_scene(&cfg.scene)?;
    let protos = prototypes_for(&gt, &cfg);
    let dets = corrupt(&gt, &cfg.corruption, &protos)?;
    let frames: Vec<_> = (1..=cfg.scene.num_frames)
        .map(|f| dets.get(&f).cloned().unwrap_or_default())
        .collect();
    let traj = run_sequence(&frames, &cfg.tracker)?;
    let pred = trajectories_to_mot(&traj);

    let layout = cfg.layout;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.scene.seed);
    let id_prev = FeatureMap::random(layout.embed_dim, layout.height, layout.width, -1.0, 1.0, &mut rng);
    let id_curr = FeatureMap::random(layout.embed_dim, layout.height, layout.width, -1.0, 1.0, &mut rng);
    let hm_prev = FeatureMap::random(layout.classes, layout.height, layout.width, 0.0, 1.0, &mut rng);
    let fm = FeatureMap::random(layout.feature_channels, layout.height, layout.width, 0.0, 1.0, &mut rng);
    let tebm = TebmParams::random(layout.embed_dim, 3, &mut rng);
    let k = DEFAULT_TOP_K.min(hm_prev.len());
    let tdrm = TdrmParams::random(
        k,
        DEFAULT_REDUCED_CHANNELS,
        layout.feature_channels,
        layout.classes,
        &mut rng,
    );

    let stages = [
        (
            "synth",
            median_of(r, || {
                Ok(corrupt(&generate_scene(&cfg.scene)?, &cfg.corruption, &protos)?)
            })?,
        ),
        ("track", median_of(r, || Ok(run_sequence(&frames, &cfg.tracker)?))?),
        ("eval", median_of(r, || Ok(evaluate(&gt, &pred, &cfg.eval)))?),
        (
            "tebm",
            median_of(r, || Ok(tebm_forward(BoostInputs::new(&id_prev, &id_curr)?, &tebm)?))?,
        ),
        (
            "tdrm",
            median_of(r, || Ok(tdrm_forward(&hm_prev, &id_prev, &id_curr, &fm, k, &tdrm)?))?,
        ),
    ];
    let boxes: usize = gt.values().map(Vec::len).sum();
    println!(
        "scene: {} frames, {} gt boxes; maps: {}x{} embed {}; repeat {r}",
        cfg.scene.num_frames, boxes, layout.height, layout.width, layout.embed_dim
    );
    for (name, d) in stages {
        println!("{name:<6} {:>10.3} ms", d.as_secs_f64() * 1e3);
    }
    let per_frame = stages[1].1.as_secs_f64() / f64::from(cfg.scene.num_frames.max(1));
    println!("tracker throughput: {:.0} frames/s", 1.0 / per_frame.max(1e-12));
    Ok(())
}
