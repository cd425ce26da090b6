use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use uavtrack_core::io::{parse_mot_file, write_atomic};
use uavtrack_core::metrics::{aggregate, evaluate, EvalConfig, EvaluationSummary, MetricsReport, SequenceReport};

use super::{load_config, sequence_dirs, usage, CmdResult};
use crate::Common;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth MOT file.
    #[arg(long, conflicts_with = "gt_dir")]
    gt: Option<PathBuf>,
    /// Results MOT file for `--gt`.
    #[arg(long, requires = "gt")]
    results: Option<PathBuf>,
    /// Directory of sequences, each holding `gt.txt`.
    #[arg(long, requires = "results_dir")]
    gt_dir: Option<PathBuf>,
    /// Directory of `<sequence>.txt` results.
    #[arg(long)]
    results_dir: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Aligned text table path (always printed to stdout).
    #[arg(long)]
    table: Option<PathBuf>,
    /// Minimum IOU for a match.
    #[arg(long)]
    iou_min: Option<f64>,
    /// Match boxes regardless of class.
    #[arg(long)]
    single_class: bool,
    #[command(flatten)]
    common: Common,
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

fn row(name: &str, m: &MetricsReport) -> String {
    format!(
        "{:<12} {:>6} {:>6} {:>5} {:>5} {:>7} {:>7} {:>6} {:>6} {:>6} {:>9} {:>6}",
        name,
        pct(m.idf1),
        m.mota.map_or_else(|| "n/a".to_string(), pct),
        m.mt,
        m.ml,
        m.fp,
        m.fn_,
        m.ids,
        pct(m.idp),
        pct(m.idr),
        pct(m.precision),
        pct(m.recall),
    )
}

/// Headline scores first, then the identity and detection ratios.
pub fn render_table(s: &EvaluationSummary) -> String {
    let mut t = String::new();
    let _ = writeln!(
        t,
        "{:<12} {:>6} {:>6} {:>5} {:>5} {:>7} {:>7} {:>6} {:>6} {:>6} {:>9} {:>6}",
        "Sequence", "IDF1", "MOTA", "MT", "ML", "FP", "FN", "IDS", "IDP", "IDR", "Precision", "Recall"
    );
    for seq in &s.per_sequence {
        let _ = writeln!(t, "{}", row(&seq.name, &seq.metrics));
    }
    if s.per_sequence.len() > 1 {
        let _ = writeln!(t, "{}", row("OVERALL", &s.aggregate));
    }
    t
}

pub fn run(args: EvalArgs) -> CmdResult {
    let cfg = load_config(&args.common)?;
    let mut ecfg: EvalConfig = cfg.eval;
    if let Some(v) = args.iou_min {
        if !(v > 0.0 && v <= 1.0) {
            return Err(usage(format!("--iou-min {v} must lie in (0, 1]")));
        }
        ecfg.iou_min = v;
    }
    ecfg.single_class |= args.single_class;

    let pairs: Vec<(String, PathBuf, PathBuf)> = match (&args.gt, &args.gt_dir) {
        (Some(gt), None) => {
            let res = args.results.clone().ok_or_else(|| usage("--gt needs --results"))?;
            let name = gt
                .parent()
                .and_then(|p| p.file_name())
                .map_or_else(|| "sequence".to_string(), |n| n.to_string_lossy().into_owned());
            vec![(name, gt.clone(), res)]
        }
        (None, Some(dir)) => {
            let res_dir = args
                .results_dir
                .clone()
                .ok_or_else(|| usage("--gt-dir needs --results-dir"))?;
            sequence_dirs(dir, "gt.txt")?
                .into_iter()
                .map(|(name, p)| {
                    let r = res_dir.join(format!("{name}.txt"));
                    (name, p.join("gt.txt"), r)
                })
                .collect()
        }
        _ => return Err(usage("eval needs exactly one of --gt or --gt-dir")),
    };

    let reports: Vec<anyhow::Result<SequenceReport>> = pairs
        .par_iter()
        .map(|(name, gt, res)| {
            let gt = parse_mot_file(gt)?;
            let pred = parse_mot_file(res)?;
            Ok(SequenceReport {
                name: name.clone(),
                metrics: evaluate(&gt, &pred, &ecfg),
            })
        })
        .collect();
    let per_sequence = reports.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    let summary = aggregate(per_sequence);

    let table = render_table(&summary);
    print!("{table}");
    if let Some(p) = &args.table {
        write_atomic(p, table.as_bytes())?;
    }
    if let Some(p) = &args.report {
        let mut json = serde_json::to_string_pretty(&summary)?;
        json.push('\n');
        write_atomic(p, json.as_bytes())?;
    }
    Ok(())
}
