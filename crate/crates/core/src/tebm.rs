//! Temporal embedding boosting.
//!
//! The previous frame's ReID map is pooled into a single query vector, the
//! query is compared against every position of the current ReID map, and the
//! resulting saliency map weights a channel descriptor that re-scales the
//! current map before a residual `Conv-BN-ReLU-Conv` block.

use rand::Rng;

use crate::tensor::{
    self, conv2d, cosine_similarity_map, dim_err, global_avg_pool, layer_norm, BatchNorm, ConvBlock, ConvParams,
    FeatureMap, TensorError, Vector, LAYER_NORM_EPS,
};

/// Default ReID embedding width.
pub const DEFAULT_EMBED_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct TebmParams {
    /// Dense `C → C` map (a 1×1 convolution on the pooled descriptor).
    pub cross_linear: ConvParams,
    pub ln_gain: Vector,
    pub ln_shift: Vector,
    pub psi: ConvBlock,
}

impl TebmParams {
    /// Zero cross-relation, unit LayerNorm gain, and a `psi` block that passes
    /// non-negative input through unchanged (up to the batch-norm epsilon).
    pub fn identity(channels: usize) -> Self {
        Self {
            cross_linear: ConvParams::zeros(channels, channels, 1, 1),
            ln_gain: Vector::filled(channels, 1.0),
            ln_shift: Vector::zeros(channels),
            psi: ConvBlock {
                conv1: ConvParams::identity(channels, 3),
                bn: BatchNorm::identity(channels),
                conv2: ConvParams::identity(channels, 3),
            },
        }
    }

    /// Randomly initialised parameters with `psi` kernels of size `psi_kernel`.
    pub fn random<R: Rng + ?Sized>(channels: usize, psi_kernel: usize, rng: &mut R) -> Self {
        let fan = (channels * psi_kernel * psi_kernel) as f32;
        let k = 1.0 / fan.sqrt();
        let sym = |rng: &mut R, s: f32, n: usize| -> Vec<f32> { (0..n).map(|_| tensor::uniform_sym(rng, s)).collect() };
        let ln_gain = Vector::new((0..channels).map(|_| rng.random_range(0.5..1.5)).collect());
        let ln_shift = Vector::new(sym(rng, 0.2, channels));
        let bn = BatchNorm {
            scale: (0..channels).map(|_| rng.random_range(0.5..1.5)).collect(),
            shift: sym(rng, 0.1, channels),
            mean: sym(rng, 0.1, channels),
            var: (0..channels).map(|_| rng.random_range(0.5..1.5)).collect(),
            eps: BatchNorm::DEFAULT_EPS,
        };
        Self {
            cross_linear: ConvParams::random(channels, channels, 1, 1, 1.0 / (channels as f32).sqrt(), 0.1, rng),
            ln_gain,
            ln_shift,
            psi: ConvBlock {
                conv1: ConvParams::random(channels, channels, psi_kernel, psi_kernel, k, 0.1, rng),
                bn,
                conv2: ConvParams::random(channels, channels, psi_kernel, psi_kernel, k, 0.1, rng),
            },
        }
    }

    pub fn channels(&self) -> usize {
        self.ln_gain.dim()
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let c = self.channels();
        let cl = &self.cross_linear;
        if cl.in_channels != c || cl.out_channels != c || cl.kernel_h != 1 || cl.kernel_w != 1 {
            return Err(dim_err("TebmParams", "cross_linear must be a 1x1 C->C map"));
        }
        if self.ln_shift.dim() != c {
            return Err(dim_err("TebmParams", "ln_shift length"));
        }
        if self.psi.in_channels() != c || self.psi.out_channels() != c {
            return Err(dim_err("TebmParams", "psi must map C->C channels"));
        }
        Ok(())
    }
}

/// Previous and current ReID maps.
#[derive(Debug, Clone, Copy)]
pub struct BoostInputs<'a> {
    pub id_prev: &'a FeatureMap,
    pub id_curr: &'a FeatureMap,
}

impl<'a> BoostInputs<'a> {
    pub fn new(id_prev: &'a FeatureMap, id_curr: &'a FeatureMap) -> Result<Self, TensorError> {
        if !id_prev.same_shape(id_curr) {
            return Err(dim_err(
                "BoostInputs",
                format!("{:?} vs {:?}", id_prev.shape(), id_curr.shape()),
            ));
        }
        Ok(Self { id_prev, id_curr })
    }
}

pub fn query_pool(id_prev: &FeatureMap) -> Vector {
    global_avg_pool(id_prev)
}

pub fn salient_attention(query: &Vector, id_curr: &FeatureMap) -> Result<FeatureMap, TensorError> {
    cosine_similarity_map(query, id_curr)
}

/// Channel weights: LayerNorm of the dense map applied to the saliency-weighted
/// sum of the current map over all positions.
pub fn channel_descriptor(id_curr: &FeatureMap, w_c: &FeatureMap, params: &TebmParams) -> Result<Vector, TensorError> {
    if w_c.channels() != 1 || w_c.height() != id_curr.height() || w_c.width() != id_curr.width() {
        return Err(dim_err(
            "channel_descriptor",
            format!("attention {:?} vs map {:?}", w_c.shape(), id_curr.shape()),
        ));
    }
    if params.channels() != id_curr.channels() {
        return Err(dim_err("channel_descriptor", "parameter width vs map channels"));
    }
    let weights = w_c.channel(0);
    let pooled: Vec<f32> = (0..id_curr.channels())
        .map(|c| {
            id_curr
                .channel(c)
                .iter()
                .zip(weights)
                .map(|(&v, &w)| f64::from(v) * f64::from(w))
                .sum::<f64>() as f32
        })
        .collect();
    let pooled = FeatureMap::new(id_curr.channels(), 1, 1, pooled)?;
    let crossed = conv2d(&pooled, &params.cross_linear)?;
    layer_norm(
        &Vector::new(crossed.into_values()),
        &params.ln_gain,
        &params.ln_shift,
        LAYER_NORM_EPS,
    )
}

/// `psi(x ⊙ w_s + x)`, with `⊙` scaling channel `c` by `w_s[c]`.
pub fn boost(id_curr: &FeatureMap, w_s: &Vector, params: &TebmParams) -> Result<FeatureMap, TensorError> {
    if w_s.dim() != id_curr.channels() {
        return Err(dim_err(
            "boost",
            format!("{} weights for {} channels", w_s.dim(), id_curr.channels()),
        ));
    }
    let (c, h, w) = id_curr.shape();
    let hw = h * w;
    let mut values = Vec::with_capacity(id_curr.len());
    for ch in 0..c {
        let s = w_s.values()[ch];
        values.extend(id_curr.channel(ch).iter().map(|&v| v * s + v));
    }
    debug_assert_eq!(values.len(), c * hw);
    let reweighted = FeatureMap::new(c, h, w, values)?;
    params.psi.forward(&reweighted)
}

pub fn tebm_forward(inputs: BoostInputs<'_>, params: &TebmParams) -> Result<FeatureMap, TensorError> {
    params.validate()?;
    let query = query_pool(inputs.id_prev);
    let w_c = salient_attention(&query, inputs.id_curr)?;
    let w_s = channel_descriptor(inputs.id_curr, &w_c, params)?;
    boost(inputs.id_curr, &w_s, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn query_pool_of_constant_and_impulse() {
        let q = query_pool(&FeatureMap::filled(4, 3, 3, 2.0));
        assert!(q.values().iter().all(|&v| v == 2.0));
        let mut imp = FeatureMap::zeros(4, 2, 5);
        imp.set(2, 1, 1, 5.0).unwrap();
        let q = query_pool(&imp);
        assert!((q.values()[2] - 0.5).abs() < 1e-7);
        assert_eq!(q.values().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn attention_all_ones_and_zero_query() {
        let q = Vector::new(vec![0.5, -1.0, 2.0]);
        let map = FeatureMap::from_fn(3, 2, 3, |c, _, _| q.values()[c]).unwrap();
        let w = salient_attention(&q, &map).unwrap();
        assert!(w.values().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        let z = salient_attention(&Vector::zeros(3), &map).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn descriptor_degenerate_cases() {
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let x = FeatureMap::random(6, 3, 4, -1.0, 1.0, &mut r);
        let w_c = FeatureMap::random(1, 3, 4, -1.0, 1.0, &mut r);

        let mut p = TebmParams::random(6, 3, &mut r);
        p.cross_linear = ConvParams::zeros(6, 6, 1, 1);
        p.ln_shift = Vector::zeros(6);
        let ws = channel_descriptor(&x, &w_c, &p).unwrap();
        assert!(ws.values().iter().all(|&v| v == 0.0));

        let mut p = TebmParams::random(6, 3, &mut r);
        p.cross_linear.bias = vec![0.0; 6];
        let ws = channel_descriptor(&x, &FeatureMap::zeros(1, 3, 4), &p).unwrap();
        assert_eq!(ws, p.ln_shift);
    }

    #[test]
    fn boost_identity_cases() {
        let mut r = ChaCha8Rng::seed_from_u64(12);
        let x = FeatureMap::random(5, 4, 4, 0.0, 2.0, &mut r);
        let p = TebmParams::identity(5);
        let y = boost(&x, &Vector::zeros(5), &p).unwrap();
        for (a, b) in y.values().iter().zip(x.values()) {
            assert!((a - b).abs() <= 1e-4 * b.abs().max(1e-6));
        }
        let y = boost(&x, &Vector::filled(5, -1.0), &p).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_shape_contract() {
        let mut r = ChaCha8Rng::seed_from_u64(13);
        let prev = FeatureMap::random(128, 16, 24, -1.0, 1.0, &mut r);
        let curr = FeatureMap::random(128, 16, 24, -1.0, 1.0, &mut r);
        let p = TebmParams::random(128, 3, &mut r);
        let out = tebm_forward(BoostInputs::new(&prev, &curr).unwrap(), &p).unwrap();
        assert_eq!(out.shape(), (128, 16, 24));
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let a = FeatureMap::zeros(4, 3, 3);
        let b = FeatureMap::zeros(4, 3, 2);
        assert!(BoostInputs::new(&a, &b).is_err());
        let p = TebmParams::identity(3);
        assert!(tebm_forward(BoostInputs::new(&a, &a).unwrap(), &p).is_err());
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let mut r = ChaCha8Rng::seed_from_u64(14);
        let q = Vector::new((0..4).map(|_| r.random_range(-1.0..1.0)).collect());
        let x = FeatureMap::random(4, 1, 12, -1.0, 1.0, &mut r);
        let perm: Vec<usize> = (0..12).rev().collect();
        let xp = FeatureMap::from_fn(4, 1, 12, |c, _, p| x.get(c, 0, perm[p])).unwrap();
        let w = salient_attention(&q, &x).unwrap();
        let wp = salient_attention(&q, &xp).unwrap();
        for (p, &src) in perm.iter().enumerate() {
            assert_eq!(wp.get(0, 0, p), w.get(0, 0, src));
        }
    }
}
