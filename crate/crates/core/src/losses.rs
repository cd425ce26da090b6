//! Training objective: penalty-reduced focal loss on heatmaps, masked L1 on
//! offsets and sizes, identity cross-entropy, and the uncertainty-weighted
//! total. All values and gradients are computed in `f64`.

use thiserror::Error;

use crate::tensor::{FeatureMap, Matrix};

/// Predictions are clamped into `[PRED_CLAMP, 1 - PRED_CLAMP]` before logs.
pub const PRED_CLAMP: f64 = 1e-6;
const FOCAL_ALPHA: i32 = 2;
const FOCAL_BETA: i32 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("shape mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("invalid argument to {op}: {detail}")]
    Argument { op: &'static str, detail: String },
}

/// Scalar loss plus its gradient with respect to the flattened prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Ground-truth heatmap. Positives are the cells whose target equals 1.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatTarget {
    map: FeatureMap,
    positives: Vec<(usize, usize, usize)>,
}

impl HeatTarget {
    pub fn new(map: FeatureMap) -> Result<Self, LossError> {
        if map.values().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(LossError::Argument {
                op: "HeatTarget",
                detail: "entries must lie in [0, 1]".into(),
            });
        }
        let mut positives = Vec::new();
        for c in 0..map.channels() {
            for y in 0..map.height() {
                for x in 0..map.width() {
                    if map.get(c, y, x) == 1.0 {
                        positives.push((c, y, x));
                    }
                }
            }
        }
        Ok(Self { map, positives })
    }

    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn positives(&self) -> &[(usize, usize, usize)] {
        &self.positives
    }
}

/// Penalty-reduced focal loss over already-flattened predictions.
///
/// Positives contribute `-(1-p)^2 ln p`, other cells
/// `-(1-t)^4 p^2 ln(1-p)`; the sum is divided by `max(1, #positives)`.
/// Gradients are zero where the clamp is active.
pub fn focal_loss_values(pred: &[f64], target: &[f32]) -> Result<LossGrad, LossError> {
    if pred.len() != target.len() {
        return Err(LossError::Dimension {
            op: "focal_heat_loss",
            detail: format!("{} predictions vs {} targets", pred.len(), target.len()),
        });
    }
    let num_pos = target.iter().filter(|&&t| t == 1.0).count();
    let norm = num_pos.max(1) as f64;
    let (lo, hi) = (PRED_CLAMP, 1.0 - PRED_CLAMP);
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&raw, &t) in pred.iter().zip(target) {
        let p = raw.clamp(lo, hi);
        let active = raw > lo && raw < hi;
        let (l, g) = if t == 1.0 {
            let q = 1.0 - p;
            let l = -q.powi(FOCAL_ALPHA) * p.ln();
            let g = 2.0 * q * p.ln() - q * q / p;
            (l, g)
        } else {
            let wneg = (1.0 - f64::from(t)).powi(FOCAL_BETA);
            let l = -wneg * p.powi(FOCAL_ALPHA) * (1.0 - p).ln();
            let g = -wneg * (2.0 * p * (1.0 - p).ln() - p * p / (1.0 - p));
            (l, g)
        };
        value += l;
        grad.push(if active { g / norm } else { 0.0 });
    }
    Ok(LossGrad {
        value: value / norm,
        grad,
    })
}

pub fn focal_heat_loss(pred: &FeatureMap, target: &HeatTarget) -> Result<LossGrad, LossError> {
    if !pred.same_shape(&target.map) {
        return Err(LossError::Dimension {
            op: "focal_heat_loss",
            detail: format!("{:?} vs {:?}", pred.shape(), target.map.shape()),
        });
    }
    let p: Vec<f64> = pred.values().iter().map(|&v| f64::from(v)).collect();
    focal_loss_values(&p, target.map.values())
}

/// Offsets and sizes at object centres, in feature-map cell units.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegTarget {
    pub centers: Vec<(usize, usize)>,
    pub offsets: Vec<[f32; 2]>,
    pub sizes: Vec<[f32; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegLoss {
    pub off: LossGrad,
    pub wh: LossGrad,
}

/// Mean absolute error over the `2 × #centers` supervised entries of a
/// `2×H×W` prediction. The subgradient at zero error is 0.
pub fn masked_l1_values(
    pred: &[f64],
    height: usize,
    width: usize,
    centers: &[(usize, usize)],
    targets: &[[f32; 2]],
) -> Result<LossGrad, LossError> {
    if pred.len() != 2 * height * width {
        return Err(LossError::Dimension {
            op: "l1_reg_loss",
            detail: format!("{} values for a 2x{height}x{width} head", pred.len()),
        });
    }
    if centers.len() != targets.len() {
        return Err(LossError::Dimension {
            op: "l1_reg_loss",
            detail: "one target per centre required".into(),
        });
    }
    let mut grad = vec![0.0; pred.len()];
    if centers.is_empty() {
        return Ok(LossGrad { value: 0.0, grad });
    }
    let n = 2.0 * centers.len() as f64;
    let hw = height * width;
    let mut value = 0.0;
    for (&(y, x), t) in centers.iter().zip(targets) {
        if y >= height || x >= width {
            return Err(LossError::Argument {
                op: "l1_reg_loss",
                detail: format!("centre ({y}, {x}) outside {height}x{width}"),
            });
        }
        for (k, &tk) in t.iter().enumerate() {
            let i = k * hw + y * width + x;
            let d = pred[i] - f64::from(tk);
            value += d.abs();
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad[i] += s / n;
        }
    }
    Ok(LossGrad { value: value / n, grad })
}

pub fn l1_reg_loss(pred_off: &FeatureMap, pred_wh: &FeatureMap, target: &RegTarget) -> Result<RegLoss, LossError> {
    for (name, m) in [("offset", pred_off), ("size", pred_wh)] {
        if m.channels() != 2 {
            return Err(LossError::Dimension {
                op: "l1_reg_loss",
                detail: format!("{name} head has {} channels, expected 2", m.channels()),
            });
        }
    }
    let to64 = |m: &FeatureMap| m.values().iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
    let off = masked_l1_values(
        &to64(pred_off),
        pred_off.height(),
        pred_off.width(),
        &target.centers,
        &target.offsets,
    )?;
    let wh = masked_l1_values(
        &to64(pred_wh),
        pred_wh.height(),
        pred_wh.width(),
        &target.centers,
        &target.sizes,
    )?;
    Ok(RegLoss { off, wh })
}

/// Fully connected identity classifier: `N × D` weights plus `N` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub weight: Matrix,
    pub bias: Vec<f32>,
}

impl Classifier {
    pub fn new(weight: Matrix, bias: Vec<f32>) -> Result<Self, LossError> {
        if bias.len() != weight.rows() {
            return Err(LossError::Dimension {
                op: "Classifier",
                detail: format!("{} biases for {} classes", bias.len(), weight.rows()),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn num_classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn dim(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdTarget {
    pub centers: Vec<(usize, usize)>,
    pub labels: Vec<usize>,
    pub classifier: Classifier,
}

impl IdTarget {
    pub fn new(centers: Vec<(usize, usize)>, labels: Vec<usize>, classifier: Classifier) -> Result<Self, LossError> {
        if centers.len() != labels.len() {
            return Err(LossError::Dimension {
                op: "IdTarget",
                detail: "one label per centre required".into(),
            });
        }
        if classifier.num_classes() < 2 {
            return Err(LossError::Argument {
                op: "IdTarget",
                detail: "at least two identity classes required".into(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classifier.num_classes()) {
            return Err(LossError::Argument {
                op: "IdTarget",
                detail: format!("label {bad} >= {}", classifier.num_classes()),
            });
        }
        Ok(Self {
            centers,
            labels,
            classifier,
        })
    }
}

/// Mean softmax cross-entropy of `classifier(e_i)` against `labels[i]`, and
/// the gradient with respect to each gathered embedding `e_i`.
pub fn reid_ce_from_embeddings(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    classifier: &Classifier,
) -> Result<(f64, Vec<Vec<f64>>), LossError> {
    if embeddings.len() != labels.len() {
        return Err(LossError::Dimension {
            op: "reid_ce_loss",
            detail: "one label per embedding required".into(),
        });
    }
    if embeddings.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let (classes, dim) = (classifier.num_classes(), classifier.dim());
    let n = embeddings.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(embeddings.len());
    for (e, &label) in embeddings.iter().zip(labels) {
        if e.len() != dim {
            return Err(LossError::Dimension {
                op: "reid_ce_loss",
                detail: format!("embedding width {} vs classifier {dim}", e.len()),
            });
        }
        let logits: Vec<f64> = (0..classes)
            .map(|k| {
                classifier
                    .weight
                    .row(k)
                    .iter()
                    .zip(e)
                    .map(|(&w, &v)| f64::from(w) * v)
                    .sum::<f64>()
                    + f64::from(classifier.bias[k])
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        total += sum.ln() + max - logits[label];
        let mut g = vec![0.0; dim];
        for (k, &ek) in exps.iter().enumerate() {
            let coeff = (ek / sum - if k == label { 1.0 } else { 0.0 }) / n;
            for (gd, &w) in g.iter_mut().zip(classifier.weight.row(k)) {
                *gd += coeff * f64::from(w);
            }
        }
        grads.push(g);
    }
    Ok((total / n, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReidLoss {
    pub value: f64,
    /// One row per supervised centre, `D` wide.
    pub grad: Vec<Vec<f64>>,
}

pub fn reid_ce_loss(id_map: &FeatureMap, target: &IdTarget) -> Result<ReidLoss, LossError> {
    if id_map.channels() != target.classifier.dim() {
        return Err(LossError::Dimension {
            op: "reid_ce_loss",
            detail: format!(
                "{} map channels vs classifier width {}",
                id_map.channels(),
                target.classifier.dim()
            ),
        });
    }
    let mut gathered = Vec::with_capacity(target.centers.len());
    for &(y, x) in &target.centers {
        if y >= id_map.height() || x >= id_map.width() {
            return Err(LossError::Argument {
                op: "reid_ce_loss",
                detail: format!("centre ({y}, {x}) outside the map"),
            });
        }
        gathered.push(id_map.column(y, x).into_iter().map(f64::from).collect());
    }
    let (value, grad) = reid_ce_from_embeddings(&gathered, &target.labels, &target.classifier)?;
    Ok(ReidLoss { value, grad })
}

/// Learnable log-variances weighting the detection and identity branches.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossState {
    pub beta1: f64,
    pub beta2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetLosses {
    pub heat_prev: f64,
    pub heat_curr: f64,
    pub off: f64,
    pub wh: f64,
}

impl DetLosses {
    pub fn sum(&self) -> f64 {
        self.heat_prev + self.heat_curr + self.off + self.wh
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReidLosses {
    pub reid_prev: f64,
    pub reid_curr: f64,
}

impl ReidLosses {
    pub fn sum(&self) -> f64 {
        self.reid_prev + self.reid_curr
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub d_beta1: f64,
    pub d_beta2: f64,
}

/// `½[e^{-β1}·ΣL_det + e^{-β2}·ΣL_reid] + β1 + β2`.
pub fn total_loss(det: &DetLosses, reid: &ReidLosses, state: &LossState) -> TotalLoss {
    let det_term = (-state.beta1).exp() * det.sum();
    let reid_term = (-state.beta2).exp() * reid.sum();
    TotalLoss {
        value: 0.5 * (det_term + reid_term) + state.beta1 + state.beta2,
        d_beta1: -0.5 * det_term + 1.0,
        d_beta2: -0.5 * reid_term + 1.0,
    }
}

/// β that zeroes the derivative for a fixed branch sum: `ln(Σ/2)`.
pub fn stationary_beta(branch_sum: f64) -> f64 {
    (branch_sum / 2.0).ln()
}
