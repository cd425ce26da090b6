use std::path::PathBuf;

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uavtrack_core::io::{RunConfig, TensorArchive};
use uavtrack_core::losses::{
    focal_heat_loss, l1_reg_loss, reid_ce_loss, stationary_beta, total_loss, Classifier, DetLosses, HeatTarget,
    LossState, ReidLosses,
};
use uavtrack_core::synth::{generate_scene, gt_ids, random_prototypes, render_maps, sample_training_pair, SceneConfig};
use uavtrack_core::tdrm::{
    correlation, max_csam, pick_topk, refine_heatmap, TdrmParams, DEFAULT_REDUCED_CHANNELS, DEFAULT_TOP_K,
};
use uavtrack_core::tebm::{tebm_forward, BoostInputs, TebmParams};
use uavtrack_core::tensor::{FeatureMap, Matrix};

use super::{ensure_dir, load_config, CmdResult, Failure};
use crate::Common;

const TEBM_PSI_KERNEL: usize = 3;
const FALLBACK_TOLERANCE: f32 = 1e-4;
const STATIONARY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Args)]
pub struct ModulesArgs {
    /// Write inputs, intermediate maps, and parameters to this directory.
    #[arg(long)]
    dump: Option<PathBuf>,
    /// TEBM parameter archive (random parameters otherwise).
    #[arg(long)]
    tebm_params: Option<PathBuf>,
    /// TDRM parameter archive (random monotone parameters otherwise).
    #[arg(long)]
    tdrm_params: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

struct Check {
    name: &'static str,
    ok: bool,
    detail: String,
}

/// A small scene that fits the map layout's input size.
fn layout_scene(cfg: &RunConfig) -> SceneConfig {
    let (w, h) = cfg.layout.image_size();
    let side = (0.25 * w.min(h)).max(2.0);
    SceneConfig {
        num_targets: 4,
        num_frames: 12,
        image_w: w,
        image_h: h,
        speed_range: [0.3, 1.0],
        ego_amplitude: 0.2,
        birth_rate: 0.0,
        death_rate: 0.0,
        box_size_range: [0.4 * side, side],
        num_classes: cfg.layout.classes as u32,
        seed: cfg.scene.seed,
    }
}

pub fn run(args: ModulesArgs) -> CmdResult {
    let cfg = load_config(&args.common)?;
    let layout = cfg.layout;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.scene.seed ^ 0x6d6f_6475_6c65);

    let gt = generate_scene(&layout_scene(&cfg))?;
    let protos = random_prototypes(&gt_ids(&gt), layout.embed_dim, &mut rng);
    let (f_prev, f_curr) = sample_training_pair(&gt, 3, &mut rng)?;
    let prev = render_maps(&gt[&f_prev], &protos, &layout)?;
    let curr = render_maps(&gt[&f_curr], &protos, &layout)?;
    let mut checks = Vec::new();

    let tebm = match &args.tebm_params {
        Some(p) => TensorArchive::read(p)?.to_tebm(&p.display().to_string())?,
        None => TebmParams::random(layout.embed_dim, TEBM_PSI_KERNEL, &mut rng),
    };
    let id_boosted = tebm_forward(BoostInputs::new(&prev.idmap, &curr.idmap)?, &tebm)?;
    checks.push(Check {
        name: "tebm shape",
        ok: id_boosted.shape() == curr.idmap.shape(),
        detail: format!("{:?}", id_boosted.shape()),
    });

    let nonneg = curr.idmap.map(f32::abs)?;
    let fallback = tebm_forward(
        BoostInputs::new(&prev.idmap, &nonneg)?,
        &TebmParams::identity(layout.embed_dim),
    )?;
    let worst = fallback
        .values()
        .iter()
        .zip(nonneg.values())
        .map(|(&a, &b)| (a - b).abs() / b.abs().max(1e-6))
        .fold(0.0f32, f32::max);
    checks.push(Check {
        name: "tebm fallback",
        ok: worst <= FALLBACK_TOLERANCE,
        detail: format!("max relative deviation {worst:.2e}"),
    });

    let k = DEFAULT_TOP_K.min(prev.hm.len());
    let tdrm = match &args.tdrm_params {
        Some(p) => TensorArchive::read(p)?.to_tdrm(&p.display().to_string())?,
        None => TdrmParams::random_monotone(
            k,
            DEFAULT_REDUCED_CHANNELS,
            layout.feature_channels,
            layout.classes,
            &mut rng,
        ),
    };
    let k = tdrm.top_k();
    let picks = pick_topk(&prev.hm, &prev.idmap, k)?;
    let m = correlation(&picks, &id_boosted)?;
    let m_hat = max_csam(&m, &tdrm)?;
    let refined = refine_heatmap(&curr.fm, &m_hat, &tdrm)?;
    let in_open_unit = refined.values().iter().all(|&v| v > 0.0 && v < 1.0);
    checks.push(Check {
        name: "tdrm range",
        ok: in_open_unit && refined.shape() == curr.hm.shape(),
        detail: format!("{:?}, k = {k}", refined.shape()),
    });

    let heat = focal_heat_loss(&refined, &HeatTarget::new(curr.hm.clone())?)?;
    let zeros2 = FeatureMap::zeros(2, layout.height, layout.width);
    let reg = l1_reg_loss(&zeros2, &zeros2, &curr.reg)?;
    let n = protos.len().max(2);
    let weight = Matrix::new(
        n,
        layout.embed_dim,
        (0..n * layout.embed_dim).map(|_| rng.random_range(-0.5..0.5)).collect(),
    )?;
    let classifier = Classifier::new(weight, vec![0.0; n])?;
    let reid_prev = reid_ce_loss(&prev.idmap, &prev.id_target(classifier.clone())?)?;
    let reid_curr = reid_ce_loss(&id_boosted, &curr.id_target(classifier)?)?;
    let det = DetLosses {
        heat_prev: heat.value,
        heat_curr: heat.value,
        off: reg.off.value,
        wh: reg.wh.value,
    };
    let reid = ReidLosses {
        reid_prev: reid_prev.value,
        reid_curr: reid_curr.value,
    };
    let state = LossState {
        beta1: stationary_beta(det.sum()),
        beta2: stationary_beta(reid.sum()),
    };
    let total = total_loss(&det, &reid, &state);
    let finite = [heat.value, reg.off.value, reg.wh.value, reid.sum(), total.value]
        .iter()
        .all(|v| v.is_finite());
    checks.push(Check {
        name: "losses",
        ok: finite && total.d_beta1.abs() < STATIONARY_TOLERANCE && total.d_beta2.abs() < STATIONARY_TOLERANCE,
        detail: format!(
            "focal {:.4}, off {:.4}, wh {:.4}, reid {:.4}, total {:.4}",
            heat.value,
            reg.off.value,
            reg.wh.value,
            reid.sum(),
            total.value
        ),
    });

    if let Some(dir) = &args.dump {
        ensure_dir(dir)?;
        let mut maps = TensorArchive::default();
        for (name, map) in [
            ("fm_prev", &prev.fm),
            ("fm_curr", &curr.fm),
            ("hm_prev", &prev.hm),
            ("hm_curr", &curr.hm),
            ("id_prev", &prev.idmap),
            ("id_curr", &curr.idmap),
            ("id_boosted", &id_boosted),
            ("correlation", &m),
            ("gated", &m_hat),
            ("hm_refined", &refined),
        ] {
            maps.push_map(name, map);
        }
        maps.write(&dir.join("maps.stct"))?;
        TensorArchive::from_tebm(&tebm).write(&dir.join("tebm.stct"))?;
        TensorArchive::from_tdrm(&tdrm).write(&dir.join("tdrm.stct"))?;
        println!("dumped tensors to {}", dir.display());
    }

    println!(
        "frames {f_prev} -> {f_curr}, layout {}x{}x{}",
        layout.classes, layout.height, layout.width
    );
    for c in &checks {
        println!("{:<14} {}  {}", c.name, if c.ok { "ok  " } else { "FAIL" }, c.detail);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.ok).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Data(anyhow::anyhow!(
            "self-test failed: {}",
            failed.join(", ")
        )))
    }
}
