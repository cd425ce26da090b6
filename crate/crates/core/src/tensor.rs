//! Dense rank-3 feature maps and the handful of deterministic kernels the
//! fusion modules are built from.
//!
//! Storage is `f32`, row-major `channels × height × width`. Every reduction
//! (pooling, means, dot products, convolution taps) accumulates in `f64`.

use rand::Rng;
use thiserror::Error;

/// Epsilon used by [`layer_norm`] when callers do not supply their own.
pub const LAYER_NORM_EPS: f32 = 1e-5;

/// Norm below which a vector is considered degenerate for cosine similarity.
pub const COSINE_NORM_GUARD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("unsupported configuration in {op}: {detail}")]
    Unsupported { op: &'static str, detail: String },
    #[error("invalid argument to {op}: {detail}")]
    Argument { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Dimension {
        op,
        detail: detail.into(),
    }
}

/// A `channels × height × width` map of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self, TensorError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(TensorError::Argument {
                op: "FeatureMap::new",
                detail: format!("all dimensions must be positive, got {channels}x{height}x{width}"),
            });
        }
        if values.len() != channels * height * width {
            return Err(dim_err(
                "FeatureMap::new",
                format!("{} values for shape {channels}x{height}x{width}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "FeatureMap::new" });
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    /// Panics if any dimension is zero.
    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        assert!(
            channels > 0 && height > 0 && width > 0,
            "feature map dimensions must be positive"
        );
        assert!(value.is_finite());
        Self {
            channels,
            height,
            width,
            values: vec![value; channels * height * width],
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self, TensorError> {
        let mut values = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    values.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, values)
    }

    /// Uniform random entries in `[lo, hi)`.
    pub fn random<R: Rng + ?Sized>(
        channels: usize,
        height: usize,
        width: usize,
        lo: f32,
        hi: f32,
        rng: &mut R,
    ) -> Self {
        let values = (0..channels * height * width)
            .map(|_| rng.random_range(lo..hi))
            .collect();
        Self::new(channels, height, width, values).expect("random map is well-formed")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn spatial_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn offset(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.values[self.offset(c, y, x)]
    }

    /// Sets one entry. Non-finite values are rejected.
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f32) -> Result<(), TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "FeatureMap::set" });
        }
        let i = self.offset(c, y, x);
        self.values[i] = value;
        Ok(())
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.spatial_len();
        &self.values[c * n..(c + 1) * n]
    }

    /// The `channels`-long vector at spatial position `(y, x)`.
    pub fn column(&self, y: usize, x: usize) -> Vec<f32> {
        (0..self.channels).map(|c| self.get(c, y, x)).collect()
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.shape() == other.shape()
    }

    /// Elementwise map; fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<FeatureMap, TensorError> {
        let values: Vec<f32> = self.values.iter().map(|&v| f(v)).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "map" });
        }
        Ok(Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            values,
        })
    }

    /// Stacks maps along the channel axis. All inputs must share `H × W`.
    pub fn concat_channels(parts: &[&FeatureMap]) -> Result<FeatureMap, TensorError> {
        let first = parts.first().ok_or_else(|| TensorError::Argument {
            op: "concat_channels",
            detail: "no inputs".into(),
        })?;
        let (h, w) = (first.height, first.width);
        let mut channels = 0;
        let mut values = Vec::new();
        for p in parts {
            if p.height != h || p.width != w {
                return Err(dim_err(
                    "concat_channels",
                    format!("spatial {}x{} vs {h}x{w}", p.height, p.width),
                ));
            }
            channels += p.channels;
            values.extend_from_slice(&p.values);
        }
        FeatureMap::new(channels, h, w, values)
    }
}

/// A dense `f32` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    values: Vec<f32>,
}

impl Vector {
    pub fn new(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::new(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f32) -> Self {
        Self::new(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<Vec<f32>> for Vector {
    fn from(values: Vec<f32>) -> Self {
        Self::new(values)
    }
}

/// Row-major `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self, TensorError> {
        if values.len() != rows * cols {
            return Err(dim_err(
                "Matrix::new",
                format!("{} values for {rows}x{cols}", values.len()),
            ));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// Views a feature map as `channels × (height·width)`.
    pub fn from_feature_map(map: &FeatureMap) -> Self {
        Self {
            rows: map.channels(),
            cols: map.spatial_len(),
            values: map.values().to_vec(),
        }
    }
}

/// Convolution weights laid out `[out][in][kh][kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvParams {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self, TensorError> {
        let params = Self {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            weights,
            bias,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            weights: vec![0.0; out_channels * in_channels * kernel_h * kernel_w],
            bias: vec![0.0; out_channels],
        }
    }

    /// Channel-preserving kernel whose only non-zero tap is the centre of the
    /// diagonal `c → c` filters.
    pub fn identity(channels: usize, kernel: usize) -> Self {
        let mut p = Self::zeros(channels, channels, kernel, kernel);
        let centre = kernel / 2;
        for c in 0..channels {
            let i = p.weight_index(c, c, centre, centre);
            p.weights[i] = 1.0;
        }
        p
    }

    /// Weights uniform in `[-scale, scale)`, biases uniform in `[-bias_scale, bias_scale)`.
    pub fn random<R: Rng + ?Sized>(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        scale: f32,
        bias_scale: f32,
        rng: &mut R,
    ) -> Self {
        let n = out_channels * in_channels * kernel_h * kernel_w;
        let weights = (0..n).map(|_| uniform_sym(rng, scale)).collect();
        let bias = (0..out_channels).map(|_| uniform_sym(rng, bias_scale)).collect();
        Self {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            weights,
            bias,
        }
    }

    #[inline]
    pub fn weight_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx
    }

    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.weights[self.weight_index(o, i, ky, kx)]
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let expected = self.out_channels * self.in_channels * self.kernel_h * self.kernel_w;
        if self.weights.len() != expected {
            return Err(dim_err(
                "ConvParams",
                format!("{} weights, expected {expected}", self.weights.len()),
            ));
        }
        if self.bias.len() != self.out_channels {
            return Err(dim_err(
                "ConvParams",
                format!("{} biases, expected {}", self.bias.len(), self.out_channels),
            ));
        }
        Ok(())
    }
}

pub(crate) fn uniform_sym<R: Rng + ?Sized>(rng: &mut R, scale: f32) -> f32 {
    if scale == 0.0 {
        0.0
    } else {
        rng.random_range(-scale..scale)
    }
}

/// Stride-1 cross-correlation with zero "same" padding.
pub fn conv2d(input: &FeatureMap, params: &ConvParams) -> Result<FeatureMap, TensorError> {
    params.validate()?;
    if params.in_channels != input.channels() {
        return Err(dim_err(
            "conv2d",
            format!(
                "kernel expects {} input channels, map has {}",
                params.in_channels,
                input.channels()
            ),
        ));
    }
    if params.kernel_h.is_multiple_of(2) || params.kernel_w.is_multiple_of(2) {
        return Err(TensorError::Unsupported {
            op: "conv2d",
            detail: format!(
                "even kernel {}x{} has no centred same padding",
                params.kernel_h, params.kernel_w
            ),
        });
    }
    let (h, w) = (input.height() as isize, input.width() as isize);
    let (ph, pw) = ((params.kernel_h / 2) as isize, (params.kernel_w / 2) as isize);
    let hw = input.spatial_len();
    let mut out = Vec::with_capacity(params.out_channels * hw);
    let mut acc = vec![0f64; hw];
    for o in 0..params.out_channels {
        acc.iter_mut().for_each(|a| *a = f64::from(params.bias[o]));
        for i in 0..params.in_channels {
            let plane = input.channel(i);
            for ky in 0..params.kernel_h {
                let dy = ky as isize - ph;
                let y0 = (-dy).max(0);
                let y1 = (h - dy).min(h);
                for kx in 0..params.kernel_w {
                    let wgt = f64::from(params.weight(o, i, ky, kx));
                    if wgt == 0.0 {
                        continue;
                    }
                    let dx = kx as isize - pw;
                    let x0 = (-dx).max(0);
                    let x1 = (w - dx).min(w);
                    for y in y0..y1 {
                        let src = ((y + dy) * w) as usize;
                        let dst = (y * w) as usize;
                        for x in x0..x1 {
                            acc[dst + x as usize] += wgt * f64::from(plane[src + (x + dx) as usize]);
                        }
                    }
                }
            }
        }
        out.extend(acc.iter().map(|&a| a as f32));
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite { op: "conv2d" });
    }
    FeatureMap::new(params.out_channels, input.height(), input.width(), out)
}

pub fn global_avg_pool(input: &FeatureMap) -> Vector {
    let n = input.spatial_len() as f64;
    let values = (0..input.channels())
        .map(|c| {
            let s: f64 = input.channel(c).iter().map(|&v| f64::from(v)).sum();
            (s / n) as f32
        })
        .collect();
    Vector::new(values)
}

/// Per-channel spatial maximum.
pub fn global_max_pool(input: &FeatureMap) -> Vector {
    let values = (0..input.channels())
        .map(|c| input.channel(c).iter().copied().fold(f32::NEG_INFINITY, f32::max))
        .collect();
    Vector::new(values)
}

/// Per-position maximum across channels, as a `1 × H × W` map.
pub fn channel_max_pool(input: &FeatureMap) -> FeatureMap {
    let hw = input.spatial_len();
    let mut out = input.channel(0).to_vec();
    for c in 1..input.channels() {
        for (o, &v) in out.iter_mut().zip(input.channel(c)) {
            *o = o.max(v);
        }
    }
    debug_assert_eq!(out.len(), hw);
    FeatureMap::new(1, input.height(), input.width(), out).expect("shape preserved")
}

/// 3×3 stride-1 max pool. Windows are clipped at the border.
pub fn max_pool_3x3_same(input: &FeatureMap) -> FeatureMap {
    let (c, h, w) = input.shape();
    let mut out = Vec::with_capacity(input.len());
    for ch in 0..c {
        let plane = input.channel(ch);
        for y in 0..h {
            let (ya, yb) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for x in 0..w {
                let (xa, xb) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let mut m = f32::NEG_INFINITY;
                for yy in ya..=yb {
                    for xx in xa..=xb {
                        m = m.max(plane[yy * w + xx]);
                    }
                }
                out.push(m);
            }
        }
    }
    FeatureMap::new(c, h, w, out).expect("shape preserved")
}

/// Cosine similarity between `query` and every spatial column of `keys`.
///
/// Positions where either norm is below [`COSINE_NORM_GUARD`] yield 0.
pub fn cosine_similarity_map(query: &Vector, keys: &FeatureMap) -> Result<FeatureMap, TensorError> {
    if query.dim() != keys.channels() {
        return Err(dim_err(
            "cosine_similarity_map",
            format!("query dim {} vs {} key channels", query.dim(), keys.channels()),
        ));
    }
    let hw = keys.spatial_len();
    let q: Vec<f64> = query.values().iter().map(|&v| f64::from(v)).collect();
    let q_norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut dots = vec![0f64; hw];
    let mut norms = vec![0f64; hw];
    for (c, &qc) in q.iter().enumerate() {
        for (p, &k) in keys.channel(c).iter().enumerate() {
            let k = f64::from(k);
            dots[p] += qc * k;
            norms[p] += k * k;
        }
    }
    let out = dots
        .iter()
        .zip(&norms)
        .map(|(&d, &n2)| {
            let k_norm = n2.sqrt();
            if q_norm < COSINE_NORM_GUARD || k_norm < COSINE_NORM_GUARD {
                0.0
            } else {
                (d / (q_norm * k_norm)).clamp(-1.0, 1.0) as f32
            }
        })
        .collect();
    FeatureMap::new(1, keys.height(), keys.width(), out)
}

/// `(x - mean) / sqrt(var + eps) * gain + shift` with population variance.
pub fn layer_norm(x: &Vector, gain: &Vector, shift: &Vector, eps: f32) -> Result<Vector, TensorError> {
    if x.dim() != gain.dim() || x.dim() != shift.dim() {
        return Err(dim_err(
            "layer_norm",
            format!("x {}, gain {}, shift {}", x.dim(), gain.dim(), shift.dim()),
        ));
    }
    if x.dim() == 0 {
        return Ok(Vector::zeros(0));
    }
    let n = x.dim() as f64;
    let mean = x.values().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = x
        .values()
        .iter()
        .map(|&v| {
            let d = f64::from(v) - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let inv = 1.0 / (var + f64::from(eps)).sqrt();
    let out = x
        .values()
        .iter()
        .zip(gain.values().iter().zip(shift.values()))
        .map(|(&v, (&g, &s))| ((f64::from(v) - mean) * inv * f64::from(g) + f64::from(s)) as f32)
        .collect();
    Ok(Vector::new(out))
}

/// Inference-mode batch normalisation parameters, one entry per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

impl BatchNorm {
    pub const DEFAULT_EPS: f32 = 1e-5;

    pub fn identity(channels: usize) -> Self {
        Self {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pointwise {
    Relu,
    Sigmoid,
    BatchNorm(BatchNorm),
}

pub fn sigmoid(x: f32) -> f32 {
    (1.0 / (1.0 + (-f64::from(x)).exp())) as f32
}

pub fn pointwise(x: &FeatureMap, kind: &Pointwise) -> Result<FeatureMap, TensorError> {
    match kind {
        Pointwise::Relu => x.map(|v| v.max(0.0)),
        Pointwise::Sigmoid => x.map(sigmoid),
        Pointwise::BatchNorm(bn) => {
            let c = x.channels();
            if [bn.scale.len(), bn.shift.len(), bn.mean.len(), bn.var.len()]
                .iter()
                .any(|&l| l != c)
            {
                return Err(dim_err("batchnorm", format!("parameter vectors must have length {c}")));
            }
            let hw = x.spatial_len();
            let mut out = Vec::with_capacity(x.len());
            for ch in 0..c {
                let inv = 1.0 / (f64::from(bn.var[ch]) + f64::from(bn.eps)).sqrt();
                let (m, s, b) = (f64::from(bn.mean[ch]), f64::from(bn.scale[ch]), f64::from(bn.shift[ch]));
                out.extend(x.channel(ch).iter().map(|&v| ((f64::from(v) - m) * inv * s + b) as f32));
            }
            debug_assert_eq!(out.len(), c * hw);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite { op: "batchnorm" });
            }
            FeatureMap::new(c, x.height(), x.width(), out)
        }
    }
}

/// Dense product `a (K×D) · b (D×M)`.
pub fn matmul_rows(a: &Matrix, b: &Matrix) -> Result<Matrix, TensorError> {
    if a.cols() != b.rows() {
        return Err(dim_err(
            "matmul_rows",
            format!("{}x{} · {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        ));
    }
    let (k, d, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Vec::with_capacity(k * m);
    let mut acc = vec![0f64; m];
    for r in 0..k {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (i, &av) in a.row(r).iter().enumerate().take(d) {
            let av = f64::from(av);
            if av == 0.0 {
                continue;
            }
            for (slot, &bv) in acc.iter_mut().zip(b.row(i)) {
                *slot += av * f64::from(bv);
            }
        }
        out.extend(acc.iter().map(|&v| v as f32));
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite { op: "matmul_rows" });
    }
    Matrix::new(k, m, out)
}

/// `Conv2d → BatchNorm → ReLU → Conv2d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv1: ConvParams,
    pub bn: BatchNorm,
    pub conv2: ConvParams,
}

impl ConvBlock {
    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap, TensorError> {
        let h = conv2d(x, &self.conv1)?;
        let h = pointwise(&h, &Pointwise::BatchNorm(self.bn.clone()))?;
        let h = pointwise(&h, &Pointwise::Relu)?;
        conv2d(&h, &self.conv2)
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = FeatureMap::random(3, 4, 5, -1.0, 1.0, &mut rng(1));
        let y = conv2d(&x, &ConvParams::identity(3, 1)).unwrap();
        assert_eq!(x, y);
        let y3 = conv2d(&x, &ConvParams::identity(3, 3)).unwrap();
        assert_eq!(x, y3);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let x = FeatureMap::random(2, 3, 3, -1.0, 1.0, &mut rng(2));
        let mut p = ConvParams::zeros(4, 2, 3, 3);
        p.bias = vec![0.5, -1.0, 2.0, 0.0];
        let y = conv2d(&x, &p).unwrap();
        for o in 0..4 {
            assert!(y.channel(o).iter().all(|&v| v == p.bias[o]));
        }
    }

    #[test]
    fn ones_kernel_on_2x2_sums_clipped_windows() {
        let x = FeatureMap::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = ConvParams::new(1, 1, 3, 3, vec![1.0; 9], vec![0.0]).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.values(), &[10.0, 10.0, 10.0, 10.0]);
    }

    #[test]
    fn conv_rejects_bad_configs() {
        let x = FeatureMap::zeros(2, 3, 3);
        assert!(matches!(
            conv2d(&x, &ConvParams::zeros(1, 3, 3, 3)),
            Err(TensorError::Dimension { .. })
        ));
        assert!(matches!(
            conv2d(&x, &ConvParams::zeros(1, 2, 2, 2)),
            Err(TensorError::Unsupported { .. })
        ));
    }

    #[test]
    fn gap_examples() {
        let x = FeatureMap::filled(3, 2, 2, 1.5);
        assert_eq!(global_avg_pool(&x).values(), &[1.5, 1.5, 1.5]);

        let mut imp = FeatureMap::zeros(2, 3, 4);
        imp.set(1, 2, 3, 6.0).unwrap();
        let v = global_avg_pool(&imp);
        assert_eq!(v.values()[0], 0.0);
        assert!((v.values()[1] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn gap_matches_double_loop() {
        let x = FeatureMap::random(4, 3, 5, -2.0, 2.0, &mut rng(3));
        let v = global_avg_pool(&x);
        for c in 0..4 {
            let mut s = 0.0f64;
            for y in 0..3 {
                for xx in 0..5 {
                    s += x.get(c, y, xx) as f64;
                }
            }
            assert!((v.values()[c] as f64 - s / 15.0).abs() < 1e-6);
        }
    }

    #[test]
    fn max_pool_examples() {
        let c = FeatureMap::filled(1, 4, 4, 0.3);
        assert_eq!(max_pool_3x3_same(&c), c);

        let mut peak = FeatureMap::zeros(1, 5, 5);
        peak.set(0, 2, 2, 0.9).unwrap();
        let p = max_pool_3x3_same(&peak);
        for y in 0..5 {
            for x in 0..5 {
                let inside = (1..=3).contains(&y) && (1..=3).contains(&x);
                assert_eq!(p.get(0, y, x), if inside { 0.9 } else { 0.0 });
            }
        }
    }

    #[test]
    fn max_pool_matches_window_oracle() {
        let x = FeatureMap::random(2, 6, 7, -1.0, 1.0, &mut rng(4));
        let p = max_pool_3x3_same(&x);
        for c in 0..2 {
            for y in 0..6i32 {
                for xx in 0..7i32 {
                    let mut m = f32::NEG_INFINITY;
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let (yy, xq) = (y + dy, xx + dx);
                            if (0..6).contains(&yy) && (0..7).contains(&xq) {
                                m = m.max(x.get(c, yy as usize, xq as usize));
                            }
                        }
                    }
                    assert_eq!(p.get(c, y as usize, xx as usize), m);
                }
            }
        }
    }

    #[test]
    fn cosine_examples() {
        let q = Vector::new(vec![1.0, 2.0, -1.0]);
        let keys = FeatureMap::new(
            3,
            1,
            3,
            vec![
                1.0, -1.0, 2.0, //
                2.0, -2.0, 0.0, //
                -1.0, 1.0, 2.0,
            ],
        )
        .unwrap();
        let m = cosine_similarity_map(&q, &keys).unwrap();
        assert!((m.get(0, 0, 0) - 1.0).abs() < 1e-6);
        assert!((m.get(0, 0, 1) + 1.0).abs() < 1e-6);
        assert!(m.get(0, 0, 2).abs() < 1e-6);
        assert!(cosine_similarity_map(&Vector::zeros(2), &keys).is_err());
        let z = cosine_similarity_map(&Vector::zeros(3), &keys).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Vector::filled(4, 1.0);
        let zeros = Vector::zeros(4);
        let c = layer_norm(&Vector::filled(4, 3.0), &ones, &zeros, LAYER_NORM_EPS).unwrap();
        assert!(c.values().iter().all(|&v| v == 0.0));

        let x = Vector::new(vec![1.0, -1.0]);
        let y = layer_norm(&x, &Vector::filled(2, 1.0), &Vector::zeros(2), 1e-12).unwrap();
        assert!((y.values()[0] - 1.0).abs() < 1e-5 && (y.values()[1] + 1.0).abs() < 1e-5);

        let b = Vector::filled(4, 0.7);
        let r = Vector::new(vec![0.3, -2.0, 5.0, 1.0]);
        let y = layer_norm(&r, &Vector::zeros(4), &b, LAYER_NORM_EPS).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.7));
        assert!(layer_norm(&r, &Vector::zeros(3), &b, 1e-5).is_err());
    }

    #[test]
    fn pointwise_examples() {
        let x = FeatureMap::random(2, 3, 3, 0.0, 2.0, &mut rng(5));
        assert_eq!(pointwise(&x, &Pointwise::Relu).unwrap(), x);
        let s = pointwise(&FeatureMap::zeros(2, 2, 2), &Pointwise::Sigmoid).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.5));
        let bn = pointwise(&x, &Pointwise::BatchNorm(BatchNorm::identity(2))).unwrap();
        for (a, b) in bn.values().iter().zip(x.values()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-6));
        }
        assert!(pointwise(&x, &Pointwise::BatchNorm(BatchNorm::identity(3))).is_err());
    }

    #[test]
    fn matmul_examples() {
        let mut r = rng(6);
        let b = Matrix::new(4, 5, (0..20).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        assert_eq!(matmul_rows(&Matrix::identity(4), &b).unwrap(), b);
        let z = matmul_rows(&Matrix::zeros(3, 4), &b).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
        let a = Matrix::new(3, 4, (0..12).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let p = matmul_rows(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let mut s = 0.0f64;
                for k in 0..4 {
                    s += a.get(i, k) as f64 * b.get(k, j) as f64;
                }
                assert!((p.get(i, j) as f64 - s).abs() < 1e-6);
            }
        }
        assert!(matmul_rows(&a, &a).is_err());
    }

    #[test]
    fn feature_map_rejects_bad_input() {
        assert!(FeatureMap::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(FeatureMap::new(0, 2, 2, vec![]).is_err());
        assert!(FeatureMap::new(1, 1, 1, vec![f32::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn conv_is_linear(seed in any::<u64>(), alpha in -4.0f32..4.0) {
            let mut r = rng(seed);
            let x = FeatureMap::random(3, 5, 6, -1.0, 1.0, &mut r);
            let mut p = ConvParams::random(2, 3, 3, 3, 1.0, 0.0, &mut r);
            p.bias = vec![0.0; 2];
            let ax = x.map(|v| alpha * v).unwrap();
            let lhs = conv2d(&ax, &p).unwrap();
            let rhs = conv2d(&x, &p).unwrap();
            for (a, b) in lhs.values().iter().zip(rhs.values()) {
                let expect = alpha * b;
                prop_assert!((a - expect).abs() <= 1e-5 * expect.abs().max(1.0));
            }
        }

        #[test]
        fn cosine_stays_in_range(seed in any::<u64>()) {
            let mut r = rng(seed);
            let keys = FeatureMap::random(6, 4, 4, -3.0, 3.0, &mut r);
            let q = Vector::new((0..6).map(|_| r.random_range(-3.0..3.0)).collect());
            let m = cosine_similarity_map(&q, &keys).unwrap();
            prop_assert!(m.values().iter().all(|&v| (-1.0 - 1e-6..=1.0 + 1e-6).contains(&v)));
        }

        #[test]
        fn max_pool_constant_is_fixed_point(v in -10.0f32..10.0, h in 1usize..6, w in 1usize..6) {
            let c = FeatureMap::filled(2, h, w, v);
            let once = max_pool_3x3_same(&c);
            prop_assert_eq!(&max_pool_3x3_same(&once), &once);
        }

        #[test]
        fn layer_norm_standardises(vals in proptest::collection::vec(-100.0f32..100.0, 2..64)) {
            let n = vals.len();
            let x = Vector::new(vals);
            let mean_in = x.values().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            let var_in = x.values().iter().map(|&v| (v as f64 - mean_in).powi(2)).sum::<f64>() / n as f64;
            let y = layer_norm(&x, &Vector::filled(n, 1.0), &Vector::zeros(n), LAYER_NORM_EPS).unwrap();
            let mean = y.values().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() <= 1e-5);
            if var_in > 1e-1 {
                let var = y.values().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
                prop_assert!((var - 1.0).abs() <= 1e-3);
            }
        }

        #[test]
        fn ops_are_pure(seed in any::<u64>()) {
            let mut r = rng(seed);
            let x = FeatureMap::random(3, 4, 4, -1.0, 1.0, &mut r);
            let p = ConvParams::random(3, 3, 3, 3, 1.0, 1.0, &mut r);
            let a = conv2d(&x, &p).unwrap();
            let b = conv2d(&x, &p).unwrap();
            prop_assert!(a.values().iter().zip(b.values()).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }
}
