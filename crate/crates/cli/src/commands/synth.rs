use std::path::PathBuf;

use clap::Args;
use uavtrack_core::io::{write_atomic, write_mot, EmbeddingRecord, EmbeddingSidecar, RunConfig};
use uavtrack_core::metrics::AnnotatedBox;
use uavtrack_core::synth::{corrupt, generate_scene};
use uavtrack_core::FrameMap;

use super::{ensure_dir, load_config, prototypes_for, usage, CmdResult};
use crate::Common;

/// Seed spacing between generated sequences.
const SEQUENCE_SEED_STRIDE: u64 = 1000;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; each sequence goes to `<out>/<name>/`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of sequences to generate.
    #[arg(long, default_value_t = 1)]
    sequences: u32,
    /// Name prefix for generated sequences.
    #[arg(long, default_value = "seq")]
    prefix: String,
    /// Generate clean detections (no misses, false positives, or noise).
    #[arg(long)]
    clean: bool,
    #[command(flatten)]
    common: Common,
}

fn offset_seeds(cfg: &mut RunConfig, delta: u64) {
    cfg.scene.seed = cfg.scene.seed.wrapping_add(delta);
    cfg.corruption.seed = cfg.corruption.seed.wrapping_add(delta);
    cfg.prototype_seed = cfg.prototype_seed.wrapping_add(delta);
}

pub fn run(args: SynthArgs) -> CmdResult {
    let base = load_config(&args.common)?;
    let out = args
        .out
        .clone()
        .or_else(|| base.output.dir.clone())
        .ok_or_else(|| usage("synth needs --out or output.dir in the config"))?;
    if args.sequences == 0 {
        return Err(usage("--sequences must be at least 1"));
    }
    for i in 0..args.sequences {
        let mut cfg = base.clone();
        offset_seeds(&mut cfg, u64::from(i) * SEQUENCE_SEED_STRIDE);
        if args.clean {
            cfg.corruption = uavtrack_core::synth::CorruptionConfig::clean(cfg.corruption.seed);
        }
        let name = format!("{}{:02}", args.prefix, i + 1);
        let dir = out.join(&name);
        ensure_dir(&dir)?;

        let gt = generate_scene(&cfg.scene)?;
        let protos = prototypes_for(&gt, &cfg);
        let dets = corrupt(&gt, &cfg.corruption, &protos)?;

        let mut det_boxes: FrameMap<AnnotatedBox> = FrameMap::new();
        let mut sidecar = EmbeddingSidecar {
            dim: cfg.embed_dim as u16,
            records: Vec::new(),
        };
        for (&f, v) in &dets {
            let boxes = v
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    sidecar.records.push(EmbeddingRecord {
                        frame: f,
                        det_index: i as u32,
                        values: d.embedding.clone(),
                    });
                    AnnotatedBox {
                        frame: f,
                        id: -1,
                        bbox: d.bbox,
                        class_id: d.class_id,
                        conf: d.score,
                        visibility: 1.0,
                    }
                })
                .collect();
            det_boxes.insert(f, boxes);
        }
        write_atomic(&dir.join("gt.txt"), write_mot(&gt).as_bytes())?;
        write_atomic(&dir.join("det.txt"), write_mot(&det_boxes).as_bytes())?;
        sidecar.write(&dir.join("det.emb"))?;
        println!(
            "{}: {} frames, {} gt boxes, {} detections",
            dir.display(),
            gt.len(),
            gt.values().map(Vec::len).sum::<usize>(),
            sidecar.records.len()
        );
    }
    Ok(())
}
