use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use rayon::prelude::*;
use uavtrack_core::assoc::{run_sequence, Detection, TrackerConfig};
use uavtrack_core::io::{
    detections_from_mot, parse_mot_file, trajectories_to_mot, write_atomic, write_mot, EmbeddingSidecar,
};

use super::{ensure_dir, load_config, sequence_dirs, usage, CmdResult};
use crate::Common;

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Detection file in MOT format.
    #[arg(long, conflicts_with = "input_dir")]
    det: Option<PathBuf>,
    /// Embedding sidecar for `--det`.
    #[arg(long, requires = "det")]
    emb: Option<PathBuf>,
    /// Results file for `--det`.
    #[arg(long, requires = "det")]
    out: Option<PathBuf>,
    /// Directory of sequences, each holding `det.txt` and optionally `det.emb`.
    #[arg(long)]
    input_dir: Option<PathBuf>,
    /// Where `<sequence>.txt` results go in directory mode.
    #[arg(long, requires = "input_dir")]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

/// Detection frames `1..=last`, with empty frames where the file has none.
fn dense_frames(det: &Path, emb: Option<&Path>) -> anyhow::Result<Vec<Vec<Detection>>> {
    let boxes = parse_mot_file(det)?;
    let sidecar = emb.map(EmbeddingSidecar::read).transpose()?;
    let mut dets = detections_from_mot(&boxes, sidecar.as_ref());
    let last = dets.keys().next_back().copied().unwrap_or(0);
    Ok((1..=last).map(|f| dets.remove(&f).unwrap_or_default()).collect())
}

fn track_file(det: &Path, emb: Option<&Path>, out: &Path, cfg: &TrackerConfig) -> anyhow::Result<usize> {
    let frames = dense_frames(det, emb)?;
    let traj = run_sequence(&frames, cfg).with_context(|| format!("tracking {}", det.display()))?;
    let boxes = trajectories_to_mot(&traj);
    write_atomic(out, write_mot(&boxes).as_bytes())?;
    Ok(boxes.values().map(Vec::len).sum())
}

pub fn run(args: TrackArgs) -> CmdResult {
    let cfg = load_config(&args.common)?;
    match (&args.det, &args.input_dir) {
        (Some(det), None) => {
            let out = args.out.as_ref().ok_or_else(|| usage("--det needs --out"))?;
            let n = track_file(det, args.emb.as_deref(), out, &cfg.tracker)?;
            println!("{}: {n} boxes", out.display());
            Ok(())
        }
        (None, Some(dir)) => {
            let out_dir = args
                .out_dir
                .clone()
                .or_else(|| cfg.output.dir.clone())
                .ok_or_else(|| usage("--input-dir needs --out-dir"))?;
            ensure_dir(&out_dir)?;
            let seqs = sequence_dirs(dir, "det.txt")?;
            let done: Vec<anyhow::Result<(String, usize)>> = seqs
                .par_iter()
                .map(|(name, path)| {
                    let emb = path.join("det.emb");
                    let emb = emb.is_file().then_some(emb);
                    let out = out_dir.join(format!("{name}.txt"));
                    track_file(&path.join("det.txt"), emb.as_deref(), &out, &cfg.tracker).map(|n| (name.clone(), n))
                })
                .collect();
            for r in done {
                let (name, n) = r?;
                println!("{name}: {n} boxes");
            }
            Ok(())
        }
        _ => Err(usage("track needs exactly one of --det or --input-dir")),
    }
}
