//! Deliberately naive reference implementations, written independently of
//! the optimised code paths and evaluated in `f64`. Only plain data is read
//! from the library types; no library operation is called.

#![allow(clippy::needless_range_loop)]

use uavtrack_core::tdrm::TdrmParams;
use uavtrack_core::tebm::TebmParams;
use uavtrack_core::tensor::{ConvBlock, ConvParams, FeatureMap};

/// Dense `c × h × w` tensor in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Dense {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            v: vec![0.0; c * h * w],
        }
    }

    pub fn from_map(m: &FeatureMap) -> Self {
        let (c, h, w) = m.shape();
        Self {
            c,
            h,
            w,
            v: m.values().iter().map(|&x| f64::from(x)).collect(),
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.v[(c * self.h + y) * self.w + x]
    }

    pub fn put(&mut self, c: usize, y: usize, x: usize, val: f64) {
        self.v[(c * self.h + y) * self.w + x] = val;
    }
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(floor)
}

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

pub fn conv2d(x: &Dense, p: &ConvParams) -> Dense {
    assert_eq!(x.c, p.in_channels);
    let (ph, pw) = (p.kernel_h / 2, p.kernel_w / 2);
    let mut out = Dense::zeros(p.out_channels, x.h, x.w);
    for o in 0..p.out_channels {
        for y in 0..x.h {
            for xx in 0..x.w {
                let mut s = f64::from(p.bias[o]);
                for i in 0..p.in_channels {
                    for ky in 0..p.kernel_h {
                        for kx in 0..p.kernel_w {
                            let sy = y as isize + ky as isize - ph as isize;
                            let sx = xx as isize + kx as isize - pw as isize;
                            if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                continue;
                            }
                            let wi = ((o * p.in_channels + i) * p.kernel_h + ky) * p.kernel_w + kx;
                            s += f64::from(p.weights[wi]) * x.at(i, sy as usize, sx as usize);
                        }
                    }
                }
                out.put(o, y, xx, s);
            }
        }
    }
    out
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn conv_block(x: &Dense, b: &ConvBlock) -> Dense {
    let mut h = conv2d(x, &b.conv1);
    let hw = h.h * h.w;
    for c in 0..h.c {
        let scale = f64::from(b.bn.scale[c]);
        let shift = f64::from(b.bn.shift[c]);
        let mean = f64::from(b.bn.mean[c]);
        let denom = (f64::from(b.bn.var[c]) + f64::from(b.bn.eps)).sqrt();
        for v in &mut h.v[c * hw..(c + 1) * hw] {
            *v = ((*v - mean) / denom * scale + shift).max(0.0);
        }
    }
    conv2d(&h, &b.conv2)
}

/// Channel means, per-pixel cosine against them, attention-weighted channel
/// sums, dense map, LayerNorm, residual reweighting, then `psi`.
pub fn tebm(id_prev: &FeatureMap, id_curr: &FeatureMap, p: &TebmParams) -> Dense {
    let prev = Dense::from_map(id_prev);
    let cur = Dense::from_map(id_curr);
    let (c, h, w) = (cur.c, cur.h, cur.w);
    let hw = (h * w) as f64;
    let query: Vec<f64> = (0..c)
        .map(|k| prev.v[k * h * w..(k + 1) * h * w].iter().sum::<f64>() / hw)
        .collect();
    let qn = query.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut attn = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let col: Vec<f64> = (0..c).map(|k| cur.at(k, y, x)).collect();
            let cn = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if qn >= 1e-12 && cn >= 1e-12 {
                attn[y * w + x] = col.iter().zip(&query).map(|(a, b)| a * b).sum::<f64>() / (qn * cn);
            }
        }
    }
    let desc: Vec<f64> = (0..c)
        .map(|k| (0..h * w).map(|i| cur.v[k * h * w + i] * attn[i]).sum())
        .collect();
    let crossed: Vec<f64> = (0..c)
        .map(|o| {
            f64::from(p.cross_linear.bias[o])
                + (0..c)
                    .map(|i| f64::from(p.cross_linear.weights[o * c + i]) * desc[i])
                    .sum::<f64>()
        })
        .collect();
    let mean = crossed.iter().sum::<f64>() / c as f64;
    let var = crossed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
    let ws: Vec<f64> = crossed
        .iter()
        .enumerate()
        .map(|(k, v)| {
            (v - mean) / (var + 1e-5).sqrt() * f64::from(p.ln_gain.values()[k]) + f64::from(p.ln_shift.values()[k])
        })
        .collect();
    let mut re = cur.clone();
    for k in 0..c {
        for v in &mut re.v[k * h * w..(k + 1) * h * w] {
            *v = *v * ws[k] + *v;
        }
    }
    conv_block(&re, &p.psi)
}

/// Exhaustive top-k: window-max mask, then a full sort of every cell.
pub fn topk(hm: &FeatureMap, k: usize) -> Vec<(usize, f32)> {
    let (c, h, w) = hm.shape();
    let vals = hm.values();
    let mut cells = Vec::with_capacity(vals.len());
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = vals[(ch * h + y) * w + x];
                let mut m = f32::NEG_INFINITY;
                for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        m = m.max(vals[(ch * h + yy) * w + xx]);
                    }
                }
                let kept = if v == m { v } else { 0.0 };
                cells.push(((ch * h + y) * w + x, kept));
            }
        }
    }
    cells.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    cells.truncate(k);
    cells
}

/// Pick, correlate, reduce, gate, decode, squash.
pub fn tdrm(
    hm_prev: &FeatureMap,
    id_prev: &FeatureMap,
    id_boosted: &FeatureMap,
    fm: &FeatureMap,
    k: usize,
    p: &TdrmParams,
) -> Dense {
    let (_, h, w) = hm_prev.shape();
    let prev = Dense::from_map(id_prev);
    let boosted = Dense::from_map(id_boosted);
    let picks = topk(hm_prev, k);
    let mut m = Dense::zeros(k, h, w);
    for (j, &(idx, _)) in picks.iter().enumerate() {
        let pos = idx % (h * w);
        let (py, px) = (pos / w, pos % w);
        for y in 0..h {
            for x in 0..w {
                let s = (0..prev.c).map(|d| prev.at(d, py, px) * boosted.at(d, y, x)).sum();
                m.put(j, y, x, s);
            }
        }
    }
    let reduced = conv2d(&m, &p.reduce);
    let r = reduced.c;
    let mut cdesc = Dense::zeros(1, 1, r);
    for c in 0..r {
        let mx = reduced.v[c * h * w..(c + 1) * h * w]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        cdesc.v[c] = mx;
    }
    let cgate: Vec<f64> = conv2d(&cdesc, &p.fc).v.iter().map(|&v| sigmoid(v)).collect();
    let mut sdesc = Dense::zeros(1, h, w);
    for i in 0..h * w {
        sdesc.v[i] = (0..r)
            .map(|c| reduced.v[c * h * w + i])
            .fold(f64::NEG_INFINITY, f64::max);
    }
    let sgate: Vec<f64> = conv2d(&sdesc, &p.fs).v.iter().map(|&v| sigmoid(v)).collect();
    let mut gated = reduced.clone();
    for c in 0..r {
        for i in 0..h * w {
            gated.v[c * h * w + i] *= cgate[c] * sgate[i];
        }
    }
    let f = Dense::from_map(fm);
    let mut stacked = Dense::zeros(f.c + r, h, w);
    stacked.v[..f.v.len()].copy_from_slice(&f.v);
    stacked.v[f.v.len()..].copy_from_slice(&gated.v);
    let mut out = conv_block(&stacked, &p.psi);
    out.v.iter_mut().for_each(|v| *v = sigmoid(*v));
    out
}

/// Best partial assignment by exhaustive search: most allowed pairs first,
/// then least total cost. `None` marks a forbidden cell.
pub fn brute_force_assignment(cost: &[Vec<Option<f64>>]) -> (usize, f64) {
    fn go(r: usize, cost: &[Vec<Option<f64>>], used: &mut Vec<bool>, acc: (usize, f64), best: &mut (usize, f64)) {
        if r == cost.len() {
            if acc.0 > best.0 || (acc.0 == best.0 && acc.1 < best.1) {
                *best = acc;
            }
            return;
        }
        go(r + 1, cost, used, acc, best);
        for c in 0..used.len() {
            if let (false, Some(v)) = (used[c], cost[r][c]) {
                used[c] = true;
                go(r + 1, cost, used, (acc.0 + 1, acc.1 + v), best);
                used[c] = false;
            }
        }
    }
    let cols = cost.first().map_or(0, Vec::len);
    let mut best = (0, 0.0);
    go(0, cost, &mut vec![false; cols], (0, 0.0), &mut best);
    best
}

/// Largest total overlap over injective row-to-column assignments.
pub fn brute_force_max_overlap(counts: &[Vec<u64>]) -> u64 {
    fn go(r: usize, m: &[Vec<u64>], used: &mut Vec<bool>, acc: u64, best: &mut u64) {
        if r == m.len() {
            *best = (*best).max(acc);
            return;
        }
        go(r + 1, m, used, acc, best);
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                go(r + 1, m, used, acc + m[r][c], best);
                used[c] = false;
            }
        }
    }
    let cols = counts.first().map_or(0, Vec::len);
    let mut best = 0;
    go(0, counts, &mut vec![false; cols], 0, &mut best);
    best
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Inverse of a small dense matrix by Gauss-Jordan elimination with partial pivoting.
pub fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        let d = m[col][col];
        m[col].iter_mut().for_each(|v| *v /= d);
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                let pivot_row = m[col].clone();
                m[r].iter_mut().zip(&pivot_row).for_each(|(v, p)| *v -= f * p);
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

/// Chi-square CDF with 4 degrees of freedom.
pub fn chi2_cdf_4(x: f64) -> f64 {
    1.0 - (-x / 2.0).exp() * (1.0 + x / 2.0)
}

/// Quantile by bisection on the closed-form CDF.
pub fn chi2_quantile_4(p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 100.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf_4(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_force_small_cases() {
        let c = vec![vec![Some(1.0), Some(2.0)], vec![Some(2.0), Some(4.0)]];
        assert_eq!(brute_force_assignment(&c), (2, 4.0));
        assert_eq!(brute_force_max_overlap(&[vec![10, 1], vec![1, 0]]), 10);
    }

    #[test]
    fn inverse_of_diagonal() {
        let inv = invert(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
        assert_eq!(inv, vec![vec![0.5, 0.0], vec![0.0, 0.25]]);
    }

    #[test]
    fn chi2_quantile_value() {
        assert!((chi2_quantile_4(0.95) - 9.4877).abs() < 1e-4);
    }
}
