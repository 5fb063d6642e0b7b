//! Banded matrices: products, LU with partial pivoting, Cholesky, and
//! spectral-norm estimation with certified brackets.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

use serde::Serialize;

/// Square matrix with `kl` sub- and `ku` super-diagonals, stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let kl = kl.min(n.saturating_sub(1));
        let ku = ku.min(n.saturating_sub(1));
        BandMatrix { n, kl, ku, data: vec![0.0; n * (kl + ku + 1)] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, 0, 0);
        m.data.iter_mut().for_each(|v| *v = 1.0);
        m
    }

    pub fn diagonal(d: &[f64]) -> Self {
        BandMatrix { n: d.len(), kl: 0, ku: 0, data: d.to_vec() }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let (mut kl, mut ku) = (0, 0);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    if j < i {
                        kl = kl.max(i - j);
                    } else {
                        ku = ku.max(j - i);
                    }
                }
            }
        }
        let mut m = Self::zeros(n, kl, ku);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    m.set(i, j, v);
                }
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    /// Column range `[lo, hi)` stored for row `i`, clipped to the matrix.
    pub fn row_cols(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[i * self.width() + j + self.kl - i]
        } else {
            0.0
        }
    }

    /// Panics when `(i, j)` lies outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let w = self.width();
        self.data[i * w + j + self.kl - i] = v;
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.n).all(|i| self.row_cols(i).all(|j| j == i || self.get(i, j) == 0.0))
    }

    pub fn is_upper_triangular(&self) -> bool {
        (0..self.n).all(|i| self.row_cols(i).all(|j| j >= i || self.get(i, j) == 0.0))
    }

    pub fn is_lower_triangular(&self) -> bool {
        (0..self.n).all(|i| self.row_cols(i).all(|j| j <= i || self.get(i, j) == 0.0))
    }

    pub fn has_unit_diagonal(&self) -> bool {
        (0..self.n).all(|i| self.get(i, i) == 1.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row_cols(i).map(|j| self.get(i, j) * x[j]).sum()).collect()
    }

    pub fn transpose_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            for j in self.row_cols(i) {
                out[j] += self.get(i, j) * y[i];
            }
        }
        out
    }

    /// `A^T A`, symmetric with half-bandwidth `kl + ku`.
    pub fn gram(&self) -> BandMatrix {
        let w = (self.kl + self.ku).min(self.n.saturating_sub(1));
        let mut g = BandMatrix::zeros(self.n, w, w);
        for r in 0..self.n {
            let cols = self.row_cols(r);
            for i in cols.clone() {
                let ai = self.get(r, i);
                if ai == 0.0 {
                    continue;
                }
                for j in cols.clone() {
                    let v = g.get(i, j) + ai * self.get(r, j);
                    g.set(i, j, v);
                }
            }
        }
        g
    }

    /// `c I - self`.
    pub fn shifted_negation(&self, c: f64) -> BandMatrix {
        let mut m = self.clone();
        m.data.iter_mut().for_each(|v| *v = -*v);
        for i in 0..self.n {
            let v = m.get(i, i) + c;
            m.set(i, i, v);
        }
        m
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> f64 {
        let mut cols = vec![0.0; self.n];
        for i in 0..self.n {
            for j in self.row_cols(i) {
                cols[j] += self.get(i, j).abs();
            }
        }
        cols.into_iter().fold(0.0, f64::max)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row_cols(i).map(|j| self.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// LU factorization with partial pivoting in band storage.
///
/// Row `i` stores columns `i - kl ..= i + ku + kl`; the extra `kl` columns hold
/// fill-in created by row interchanges.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    /// Returns the index of the first exactly-zero pivot on failure.
    pub fn factor(a: &BandMatrix) -> Result<Self, usize> {
        let (n, kl, ku) = (a.n, a.kl, a.ku);
        let w = 2 * kl + ku + 1;
        let mut lu = BandLu { n, kl, ku, data: vec![0.0; n * w], piv: vec![0; n] };
        for i in 0..n {
            for j in a.row_cols(i) {
                lu.set(i, j, a.get(i, j));
            }
        }
        let uw = kl + ku;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu.get(k, k).abs();
            for r in k + 1..=last_row {
                let v = lu.get(r, k).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            lu.piv[k] = p;
            if best == 0.0 {
                return Err(k);
            }
            let last_col = (k + uw).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let (x, y) = (lu.get(k, j), lu.get(p, j));
                    lu.set(k, j, y);
                    lu.set(p, j, x);
                }
            }
            let pivot = lu.get(k, k);
            for r in k + 1..=last_row {
                let l = lu.get(r, k) / pivot;
                lu.set(r, k, l);
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        let v = lu.get(r, j) - l * lu.get(k, j);
                        lu.set(r, j, v);
                    }
                }
            }
        }
        Ok(lu)
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * (2 * self.kl + self.ku + 1) + j + self.kl - i
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            if xk != 0.0 {
                for r in k + 1..=(k + self.kl).min(n - 1) {
                    x[r] -= self.get(r, k) * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + self.kl + self.ku).min(n - 1) {
                s -= self.get(k, j) * x[j];
            }
            x[k] = s / self.get(k, k);
        }
        x
    }

    pub fn log_abs_det(&self) -> f64 {
        (0..self.n).map(|k| self.get(k, k).abs().ln()).sum()
    }

    pub fn det_sign(&self) -> f64 {
        let mut sign = 1.0;
        for k in 0..self.n {
            if self.piv[k] != k {
                sign = -sign;
            }
            if self.get(k, k) < 0.0 {
                sign = -sign;
            }
        }
        sign
    }
}

/// Lower Cholesky factor of a symmetric positive definite band matrix.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    w: usize,
    data: Vec<f64>,
}

impl BandCholesky {
    /// `None` when the matrix is not numerically positive definite.
    pub fn factor(a: &BandMatrix) -> Option<Self> {
        let n = a.n;
        let w = a.kl.max(a.ku);
        let mut c = BandCholesky { n, w, data: vec![0.0; n * (w + 1)] };
        for i in 0..n {
            let lo = i.saturating_sub(w);
            for j in lo..=i {
                let mut s = a.get(i, j);
                for k in lo.max(j.saturating_sub(w))..j {
                    s -= c.get(i, k) * c.get(j, k);
                }
                if i == j {
                    if !(s > 0.0) {
                        return None;
                    }
                    c.set(i, i, s.sqrt());
                } else {
                    let v = s / c.get(j, j);
                    c.set(i, j, v);
                }
            }
        }
        Some(c)
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.w + 1) + j + self.w - i]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * (self.w + 1) + j + self.w - i] = v;
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.get(i, i).ln()).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormEstimate {
    /// Point estimate (exact for diagonal matrices).
    pub value: f64,
    /// Certified lower bound (square root of a Rayleigh quotient of `A^T A`).
    pub lower: f64,
    /// Certified upper bound (`min(sqrt(|A|_1 |A|_inf), sqrt(Gershgorin(A^T A)))`).
    pub upper: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Spectral norm by power iteration on `A^T A` from the normalized all-ones vector.
pub fn spectral_norm(a: &BandMatrix, rel_tol: f64, max_iter: usize) -> NormEstimate {
    let n = a.n;
    if n == 0 {
        return NormEstimate { value: 0.0, lower: 0.0, upper: 0.0, iterations: 0, converged: true };
    }
    if a.is_diagonal() {
        let v = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
        return NormEstimate { value: v, lower: v, upper: v, iterations: 0, converged: true };
    }
    let g = a.gram();
    let gersh = (0..n)
        .map(|i| g.row_cols(i).map(|j| g.get(i, j).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let upper = (a.norm_1() * a.norm_inf()).sqrt().min(gersh.sqrt());

    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut theta = 0.0f64;
    let mut best = 0.0f64;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        let w = a.transpose_mul_vec(&a.mul_vec(&v));
        let next: f64 = v.iter().zip(&w).map(|(x, y)| x * y).sum();
        best = best.max(next);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            converged = true;
            break;
        }
        v = w.into_iter().map(|x| x / norm).collect();
        if it > 1 && (next - theta).abs() <= rel_tol * next.abs() {
            theta = next;
            converged = true;
            break;
        }
        theta = next;
    }
    let lower = best.sqrt().min(upper);
    let value = theta.max(best).sqrt().clamp(lower, upper);
    NormEstimate { value, lower, upper, iterations, converged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_mul(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
    }

    #[test]
    fn band_storage_round_trip() {
        let d = vec![vec![1.0, 2.0, 0.0], vec![3.0, 4.0, 5.0], vec![0.0, 6.0, 7.0]];
        let m = BandMatrix::from_dense(&d);
        assert_eq!(m.lower_bandwidth(), 1);
        assert_eq!(m.upper_bandwidth(), 1);
        assert_eq!(m.to_dense(), d);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![3.0, 12.0, 13.0]);
        assert_eq!(m.transpose_mul_vec(&[1.0, 1.0, 1.0]), vec![4.0, 12.0, 12.0]);
        assert_eq!(m.norm_1(), 12.0);
        assert_eq!(m.norm_inf(), 13.0);
    }

    #[test]
    fn gram_matches_dense() {
        let d = vec![vec![1.0, 0.125, 0.0], vec![0.0, 1.0, 0.03125], vec![0.0, 0.0, 1.0]];
        let g = BandMatrix::from_dense(&d).gram();
        for i in 0..3 {
            for j in 0..3 {
                let e: f64 = (0..3).map(|r| d[r][i] * d[r][j]).sum();
                assert!((g.get(i, j) - e).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn lu_needs_pivoting() {
        let d = vec![vec![0.0, 1.0], vec![1.0, 1.0]];
        let lu = BandLu::factor(&BandMatrix::from_dense(&d)).unwrap();
        let x = lu.solve(&[2.0, 3.0]);
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        assert!(lu.log_abs_det().abs() < 1e-15);
        assert_eq!(lu.det_sign(), -1.0);
    }

    #[test]
    fn lu_reports_singular() {
        let d = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(BandLu::factor(&BandMatrix::from_dense(&d)).is_err());
        assert_eq!(BandLu::factor(&BandMatrix::diagonal(&[1.0, 0.0])).unwrap_err(), 1);
    }

    #[test]
    fn cholesky_log_det() {
        // [[4, 2], [2, 3]] has determinant 8
        let m = BandMatrix::from_dense(&[vec![4.0, 2.0], vec![2.0, 3.0]]);
        let c = BandCholesky::factor(&m).unwrap();
        assert!((c.log_det() - 8f64.ln()).abs() < 1e-14);
        let indefinite = BandMatrix::from_dense(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(BandCholesky::factor(&indefinite).is_none());
    }

    #[test]
    fn norm_of_diagonal_is_exact() {
        let e = spectral_norm(&BandMatrix::diagonal(&[0.5, -0.8]), 1e-10, 100);
        assert_eq!(e.value, 0.8);
        assert_eq!(e.lower, 0.8);
    }

    #[test]
    fn norm_of_upper_bidiagonal_2x2() {
        // singular values of [[1, c], [0, 1]]: sqrt(1 + c^2/4) + c/2
        let c = 0.125;
        let m = BandMatrix::from_dense(&[vec![1.0, c], vec![0.0, 1.0]]);
        let e = spectral_norm(&m, 1e-12, 10_000);
        let exact = (1.0 + c * c / 4.0).sqrt() + c / 2.0;
        assert!(e.converged);
        assert!((e.value - exact).abs() < 1e-9);
        assert!(e.lower <= exact + 1e-15 && exact <= e.upper);
    }

    fn band_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..9, 0usize..3, 0usize..3).prop_flat_map(|(n, kl, ku)| {
            prop::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| {
                (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| {
                                if i == j {
                                    v[i * n + j] + 3.0f64.copysign(v[i * n + j])
                                } else if j + kl >= i && j <= i + ku {
                                    v[i * n + j]
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn lu_solves_band_systems(d in band_strategy(), seed in 0u64..1000) {
            let n = d.len();
            let m = BandMatrix::from_dense(&d);
            let lu = BandLu::factor(&m).unwrap();
            let x: Vec<f64> = (0..n).map(|i| ((i as u64 * 37 + seed) % 11) as f64 - 5.0).collect();
            let b = dense_mul(&d, &x);
            let got = lu.solve(&b);
            for (g, e) in got.iter().zip(&x) {
                prop_assert!((g - e).abs() < 1e-9);
            }
        }

        #[test]
        fn norm_bracket_contains_estimate(d in band_strategy()) {
            let m = BandMatrix::from_dense(&d);
            let e = spectral_norm(&m, 1e-10, 5000);
            prop_assert!(e.lower <= e.value && e.value <= e.upper);
            // any unit vector gives a lower bound
            let ones = vec![1.0 / (d.len() as f64).sqrt(); d.len()];
            let av = m.mul_vec(&ones);
            let r = av.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(r <= e.upper * (1.0 + 1e-12));
        }
    }
}
