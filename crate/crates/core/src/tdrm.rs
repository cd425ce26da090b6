//! Temporal detection refinement.
//!
//! Peaks of the previous heatmap select trajectory embeddings from the
//! previous ReID map; their dot-product correlation with the boosted current
//! ReID map is compressed and gated (MAX-CSAM), concatenated with the current
//! backbone features, and decoded into a refined heatmap.

use rand::Rng;

use crate::tensor::{
    channel_max_pool, conv2d, dim_err, global_max_pool, matmul_rows, max_pool_3x3_same, sigmoid, BatchNorm, ConvBlock,
    ConvParams, FeatureMap, Matrix, TensorError,
};

pub const DEFAULT_TOP_K: usize = 100;
pub const DEFAULT_REDUCED_CHANNELS: usize = 32;
pub const DEFAULT_FEATURE_CHANNELS: usize = 64;

/// Lower and upper clamp of the refined heatmap, keeping it inside `(0, 1)`
/// when the sigmoid saturates in `f32`.
pub const HEATMAP_FLOOR: f32 = f32::MIN_POSITIVE;
pub const HEATMAP_CEIL: f32 = 1.0 - f32::EPSILON / 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TopKPicks {
    pub k: usize,
    /// Flattened `C×H×W` positions.
    pub indices: Vec<usize>,
    pub scores: Vec<f32>,
    /// `k × D` rows gathered from the previous ReID map.
    pub embeddings: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdrmParams {
    /// 1×1 convolution `K → R`.
    pub reduce: ConvParams,
    /// 1-D convolution (kernel 3, padding 1) over the `R`-long channel descriptor,
    /// stored as a `1×3` kernel on a `1×1×R` map.
    pub fc: ConvParams,
    /// 7×7 convolution `1 → 1` over the spatial descriptor.
    pub fs: ConvParams,
    /// `Conv3x3 (F+R → F) → BN → ReLU → Conv1x1 (F → C)`.
    pub psi: ConvBlock,
}

impl TdrmParams {
    fn shaped(k: usize, reduced: usize, features: usize, classes: usize) -> Self {
        Self {
            reduce: ConvParams::zeros(reduced, k, 1, 1),
            fc: ConvParams::zeros(1, 1, 1, 3),
            fs: ConvParams::zeros(1, 1, 7, 7),
            psi: ConvBlock {
                conv1: ConvParams::zeros(features, features + reduced, 3, 3),
                bn: BatchNorm::identity(features),
                conv2: ConvParams::zeros(classes, features, 1, 1),
            },
        }
    }

    pub fn random<R: Rng + ?Sized>(k: usize, reduced: usize, features: usize, classes: usize, rng: &mut R) -> Self {
        let mut p = Self::shaped(k, reduced, features, classes);
        p.reduce = ConvParams::random(reduced, k, 1, 1, 1.0 / (k as f32).sqrt(), 0.1, rng);
        p.fc = ConvParams::random(1, 1, 1, 3, 0.5, 0.1, rng);
        p.fs = ConvParams::random(1, 1, 7, 7, 1.0 / 7.0, 0.1, rng);
        let fan1 = ((features + reduced) * 9) as f32;
        p.psi.conv1 = ConvParams::random(features, features + reduced, 3, 3, 1.0 / fan1.sqrt(), 0.1, rng);
        p.psi.bn = BatchNorm {
            scale: (0..features).map(|_| rng.random_range(0.5..1.5)).collect(),
            shift: (0..features).map(|_| rng.random_range(-0.1..0.1)).collect(),
            mean: (0..features).map(|_| rng.random_range(-0.1..0.1)).collect(),
            var: (0..features).map(|_| rng.random_range(0.5..1.5)).collect(),
            eps: BatchNorm::DEFAULT_EPS,
        };
        p.psi.conv2 = ConvParams::random(classes, features, 1, 1, 1.0 / (features as f32).sqrt(), 0.1, rng);
        p
    }

    /// All weights non-negative and batch-norm scales positive, so the refined
    /// heatmap is monotone non-decreasing in every entry of the gated map.
    pub fn random_monotone<R: Rng + ?Sized>(
        k: usize,
        reduced: usize,
        features: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::random(k, reduced, features, classes, rng);
        for w in p.psi.conv1.weights.iter_mut().chain(p.psi.conv2.weights.iter_mut()) {
            *w = w.abs();
        }
        for s in &mut p.psi.bn.scale {
            *s = s.abs().max(1e-3);
        }
        p
    }

    /// Hand-set non-negative prior. The backbone enters as a weighted window
    /// mean and keeps the background low; a unit of gated trajectory evidence
    /// adds up to `EVIDENCE_GAIN · HEAT_GAIN` to the logit. Both use the
    /// centre-weighted `[1 2 1]ᵀ[1 2 1]` kernel so peaks stay on the evidence.
    pub fn evidence_prior(k: usize, reduced: usize, features: usize, classes: usize) -> Self {
        const EVIDENCE_GAIN: f32 = 4.0;
        const HEAT_GAIN: f32 = 6.0;
        const HEAT_BIAS: f32 = -4.0;
        let mut p = Self::shaped(k, reduced, features, classes);
        p.reduce.weights.iter_mut().for_each(|w| *w = 1.0);
        p.fc.weights = vec![0.5; 3];
        let centre = 24;
        p.fs.weights[centre] = 1.0;
        let taps = [1.0f32, 2.0, 1.0];
        for o in 0..features {
            for i in 0..features + reduced {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let tap = taps[ky] * taps[kx];
                        let w = if i < features {
                            tap / (16 * features) as f32
                        } else {
                            EVIDENCE_GAIN * tap / (4 * reduced) as f32
                        };
                        let idx = p.psi.conv1.weight_index(o, i, ky, kx);
                        p.psi.conv1.weights[idx] = w;
                    }
                }
            }
        }
        p.psi
            .conv2
            .weights
            .iter_mut()
            .for_each(|w| *w = HEAT_GAIN / features as f32);
        p.psi.conv2.bias = vec![HEAT_BIAS; classes];
        p
    }

    pub fn top_k(&self) -> usize {
        self.reduce.in_channels
    }

    pub fn reduced_channels(&self) -> usize {
        self.reduce.out_channels
    }

    pub fn feature_channels(&self) -> usize {
        self.psi.in_channels() - self.reduced_channels()
    }

    pub fn classes(&self) -> usize {
        self.psi.out_channels()
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        for p in [&self.reduce, &self.fc, &self.fs, &self.psi.conv1, &self.psi.conv2] {
            p.validate()?;
        }
        if self.reduce.kernel_h != 1 || self.reduce.kernel_w != 1 {
            return Err(dim_err("TdrmParams", "reduce must be 1x1"));
        }
        if (
            self.fc.in_channels,
            self.fc.out_channels,
            self.fc.kernel_h,
            self.fc.kernel_w,
        ) != (1, 1, 1, 3)
        {
            return Err(dim_err("TdrmParams", "fc must be a 1->1 kernel-3 1-D conv"));
        }
        if (
            self.fs.in_channels,
            self.fs.out_channels,
            self.fs.kernel_h,
            self.fs.kernel_w,
        ) != (1, 1, 7, 7)
        {
            return Err(dim_err("TdrmParams", "fs must be a 1->1 7x7 conv"));
        }
        if self.psi.in_channels() <= self.reduced_channels() {
            return Err(dim_err("TdrmParams", "psi input must hold features plus reduced map"));
        }
        if self.psi.bn.channels() != self.psi.conv1.out_channels
            || self.psi.conv2.in_channels != self.psi.conv1.out_channels
        {
            return Err(dim_err("TdrmParams", "psi inner width"));
        }
        Ok(())
    }
}

/// Peaks of `hm_prev` (cells equal to their 3×3 window max), ranked by score
/// with ties broken by ascending flattened index, and their embeddings.
pub fn pick_topk(hm_prev: &FeatureMap, id_prev: &FeatureMap, k: usize) -> Result<TopKPicks, TensorError> {
    let total = hm_prev.len();
    if k == 0 || k > total {
        return Err(TensorError::Argument {
            op: "pick_topk",
            detail: format!("k = {k} outside 1..={total}"),
        });
    }
    if hm_prev.height() != id_prev.height() || hm_prev.width() != id_prev.width() {
        return Err(dim_err(
            "pick_topk",
            format!("heatmap {:?} vs ReID map {:?}", hm_prev.shape(), id_prev.shape()),
        ));
    }
    let pooled = max_pool_3x3_same(hm_prev);
    let masked: Vec<f32> = hm_prev
        .values()
        .iter()
        .zip(pooled.values())
        .map(|(&v, &m)| if v == m { v } else { 0.0 })
        .collect();

    let mut order: Vec<usize> = (0..total).collect();
    let rank = |a: &usize, b: &usize| masked[*b].total_cmp(&masked[*a]).then(a.cmp(b));
    if k < total {
        order.select_nth_unstable_by(k - 1, rank);
        order.truncate(k);
    }
    order.sort_unstable_by(rank);

    let hw = hm_prev.spatial_len();
    let w = hm_prev.width();
    let dim = id_prev.channels();
    let mut rows = Vec::with_capacity(k * dim);
    for &idx in &order {
        let p = idx % hw;
        rows.extend(id_prev.column(p / w, p % w));
    }
    Ok(TopKPicks {
        k,
        scores: order.iter().map(|&i| masked[i]).collect(),
        indices: order,
        embeddings: Matrix::new(k, dim, rows)?,
    })
}

/// `M[j, y, x] = <picks[j], id_boosted[:, y, x]>`.
pub fn correlation(picks: &TopKPicks, id_boosted: &FeatureMap) -> Result<FeatureMap, TensorError> {
    if picks.embeddings.cols() != id_boosted.channels() {
        return Err(dim_err(
            "correlation",
            format!(
                "embedding width {} vs {} channels",
                picks.embeddings.cols(),
                id_boosted.channels()
            ),
        ));
    }
    let m = matmul_rows(&picks.embeddings, &Matrix::from_feature_map(id_boosted))?;
    FeatureMap::new(picks.k, id_boosted.height(), id_boosted.width(), m.values().to_vec())
}

/// MAX-CSAM: reduce `K → R`, then gate by a channel attention from the
/// spatial maxima and a spatial attention from the channel maxima.
pub fn max_csam(m: &FeatureMap, params: &TdrmParams) -> Result<FeatureMap, TensorError> {
    if m.channels() != params.reduce.in_channels {
        return Err(dim_err(
            "max_csam",
            format!(
                "{} channels, reduce expects {}",
                m.channels(),
                params.reduce.in_channels
            ),
        ));
    }
    let reduced = conv2d(m, &params.reduce)?;
    let r = reduced.channels();

    let channel_desc = global_max_pool(&reduced);
    let channel_desc = FeatureMap::new(1, 1, r, channel_desc.into_values())?;
    let channel_gate: Vec<f32> = conv2d(&channel_desc, &params.fc)?
        .values()
        .iter()
        .map(|&v| sigmoid(v))
        .collect();

    let spatial_desc = channel_max_pool(&reduced);
    let spatial_gate: Vec<f32> = conv2d(&spatial_desc, &params.fs)?
        .values()
        .iter()
        .map(|&v| sigmoid(v))
        .collect();

    let mut out = Vec::with_capacity(reduced.len());
    for (c, &cg) in channel_gate.iter().enumerate() {
        out.extend(
            reduced
                .channel(c)
                .iter()
                .zip(&spatial_gate)
                .map(|(&v, &sg)| cg * sg * v),
        );
    }
    FeatureMap::new(r, m.height(), m.width(), out)
}

/// Concatenate backbone features with the gated map, decode with `psi`, and
/// squash into `(0, 1)`.
pub fn refine_heatmap(
    fm_curr: &FeatureMap,
    m_hat: &FeatureMap,
    params: &TdrmParams,
) -> Result<FeatureMap, TensorError> {
    if fm_curr.height() != m_hat.height() || fm_curr.width() != m_hat.width() {
        return Err(dim_err(
            "refine_heatmap",
            format!("features {:?} vs gated map {:?}", fm_curr.shape(), m_hat.shape()),
        ));
    }
    let stacked = FeatureMap::concat_channels(&[fm_curr, m_hat])?;
    if stacked.channels() != params.psi.in_channels() {
        return Err(dim_err(
            "refine_heatmap",
            format!(
                "{} stacked channels, psi expects {}",
                stacked.channels(),
                params.psi.in_channels()
            ),
        ));
    }
    params
        .psi
        .forward(&stacked)?
        .map(|v| sigmoid(v).clamp(HEATMAP_FLOOR, HEATMAP_CEIL))
}

pub fn tdrm_forward(
    hm_prev: &FeatureMap,
    id_prev: &FeatureMap,
    id_boosted: &FeatureMap,
    fm_curr: &FeatureMap,
    k: usize,
    params: &TdrmParams,
) -> Result<FeatureMap, TensorError> {
    params.validate()?;
    let picks = pick_topk(hm_prev, id_prev, k)?;
    let m = correlation(&picks, id_boosted)?;
    let m_hat = max_csam(&m, params)?;
    refine_heatmap(fm_curr, &m_hat, params)
}
