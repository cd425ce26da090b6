//! Rectangular linear assignment with forbidden cells.
//!
//! Forbidden cells (non-finite costs) are replaced by a penalty larger than
//! any spread of finite totals, the square-padded problem is solved with the
//! shortest-augmenting-path Hungarian method, and pairs that landed on a
//! penalty cell are dropped. The result therefore maximises the number of
//! allowed pairs first and minimises their total cost second.

/// Marker for an unassignable cell.
pub const FORBIDDEN: f64 = f64::INFINITY;

/// Dense `rows × cols` cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols, "cost matrix shape");
        Self { rows, cols, values }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn is_allowed(&self, r: usize, c: usize) -> bool {
        self.get(r, c).is_finite()
    }

    /// Sum of the costs of `pairs`.
    pub fn total(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(r, c)| self.get(r, c)).sum()
    }
}

/// Optimal partial assignment, sorted by row.
pub fn hungarian(cost: &CostMatrix) -> Vec<(usize, usize)> {
    let (n, m) = (cost.rows, cost.cols);
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let finite = cost.values.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return Vec::new();
    }
    let k = n.min(m) as f64;
    let penalty = hi + k * (hi - lo) + 1.0;

    // Solve with rows <= cols; transpose if needed.
    let transposed = n > m;
    let (rn, cn) = if transposed { (m, n) } else { (n, m) };
    let at = |r: usize, c: usize| -> f64 {
        let v = if transposed { cost.get(c, r) } else { cost.get(r, c) };
        if v.is_finite() {
            v
        } else {
            penalty
        }
    };

    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0f64; rn + 1];
    let mut v = vec![0.0f64; cn + 1];
    let mut owner = vec![0usize; cn + 1];
    let mut way = vec![0usize; cn + 1];
    for row in 1..=rn {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; cn + 1];
        let mut used = vec![false; cn + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=cn {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cn {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=cn)
        .filter(|&j| owner[j] != 0)
        .map(|j| {
            let (r, c) = (owner[j] - 1, j - 1);
            if transposed {
                (c, r)
            } else {
                (r, c)
            }
        })
        .filter(|&(r, c)| cost.is_allowed(r, c))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Assignment restricted to cells with cost at most `threshold`, plus the
/// unmatched row and column indices.
pub fn assign_with_threshold(cost: &CostMatrix, threshold: f64) -> (Vec<(usize, usize)>, Vec<usize>, Vec<usize>) {
    let gated = CostMatrix::from_fn(cost.rows, cost.cols, |r, c| {
        let v = cost.get(r, c);
        if v.is_finite() && v <= threshold {
            v
        } else {
            FORBIDDEN
        }
    });
    let pairs = hungarian(&gated);
    let mut row_used = vec![false; cost.rows];
    let mut col_used = vec![false; cost.cols];
    for &(r, c) in &pairs {
        row_used[r] = true;
        col_used[c] = true;
    }
    let rows = (0..cost.rows).filter(|&r| !row_used[r]).collect();
    let cols = (0..cost.cols).filter(|&c| !col_used[c]).collect();
    (pairs, rows, cols)
}
