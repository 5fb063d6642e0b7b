//! Transformations of the product space and their finite truncations.
//!
//! A [`SymbolSpec`] describes `A` on all coordinates; [`SymbolSpec::truncate`]
//! produces `A_n` acting on the first `n`. Indices in the public API are
//! 1-based where they name coordinates, matching the usual `a_ij` notation.

use serde::{Deserialize, Serialize};

use crate::error::{OplimError, Result};
use crate::linalg::{spectral_norm, BandLu, BandMatrix, NormEstimate};

pub const NORM_REL_TOL: f64 = 1e-10;
pub const NORM_MAX_ITER: usize = 200_000;

/// Row-finite (or not) linear symbols given by a generator `(i, j) -> a_ij`.
#[derive(Debug, Clone, PartialEq)]
pub enum BandedSpec {
    /// `a_ii = 1`, `a_{i,i+1} = 2^{-(2i+1)}`.
    Example52,
    /// `a_ii = exp(-1/i^2)`, `a_{i,i+1} = (1 - exp(-1/(i+1)^2)) / 2`.
    ExpInvSquare,
    /// `a_ij = 2^{-(j-i)-1}` for `j >= i`: every row is infinite.
    GeometricTail,
    /// Rows `1..=rows.len()` given as `(column, value)` lists, 1-based.
    Explicit { rows: Vec<Vec<(usize, f64)>> },
}

impl BandedSpec {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match self {
            BandedSpec::Example52 => {
                if j == i {
                    1.0
                } else if j == i + 1 {
                    0.5f64.powi((2 * i + 1) as i32)
                } else {
                    0.0
                }
            }
            BandedSpec::ExpInvSquare => {
                if j == i {
                    (-1.0 / (i * i) as f64).exp()
                } else if j == i + 1 {
                    -0.5 * (-1.0 / (j * j) as f64).exp_m1()
                } else {
                    0.0
                }
            }
            BandedSpec::GeometricTail => {
                if j >= i {
                    0.5f64.powi((j - i + 1) as i32)
                } else {
                    0.0
                }
            }
            BandedSpec::Explicit { rows } => rows
                .get(i - 1)
                .and_then(|r| r.iter().find(|(k, _)| *k == j))
                .map_or(0.0, |&(_, v)| v),
        }
    }

    /// Smallest and largest column read by row `i`; `None` if unbounded.
    pub fn row_support(&self, i: usize) -> Option<(usize, usize)> {
        match self {
            BandedSpec::Example52 | BandedSpec::ExpInvSquare => Some((i, i + 1)),
            BandedSpec::GeometricTail => None,
            BandedSpec::Explicit { rows } => {
                let row = rows.get(i - 1)?;
                let lo = row.iter().map(|e| e.0).min().unwrap_or(i);
                let hi = row.iter().map(|e| e.0).max().unwrap_or(i);
                Some((lo.min(i), hi.max(i)))
            }
        }
    }

    pub fn available(&self) -> Option<usize> {
        match self {
            BandedSpec::Explicit { rows } => Some(rows.len()),
            _ => None,
        }
    }

    fn truncate(&self, n: usize) -> BandMatrix {
        let (mut kl, mut ku) = (0, 0);
        for i in 1..=n {
            let (lo, hi) = self.row_support(i).unwrap_or((i, n));
            kl = kl.max(i - lo.min(i));
            ku = ku.max(hi.min(n).saturating_sub(i));
        }
        let mut m = BandMatrix::zeros(n, kl, ku);
        for i in 1..=n {
            let (lo, hi) = self.row_support(i).unwrap_or((i, n));
            for j in lo.max(1)..=hi.min(n) {
                let v = self.entry(i, j);
                if v != 0.0 {
                    m.set(i - 1, j - 1, v);
                }
            }
        }
        m
    }

    /// `lim log|det A_n|` when known in closed form.
    pub fn log_abs_det_limit(&self) -> Option<f64> {
        match self {
            BandedSpec::Example52 => Some(0.0),
            BandedSpec::ExpInvSquare => Some(-std::f64::consts::PI.powi(2) / 6.0),
            BandedSpec::GeometricTail => Some(f64::NEG_INFINITY),
            BandedSpec::Explicit { .. } => None,
        }
    }
}

/// `x -> x^2 / (1 + x^2)` for `x > 0`, else 0; values in `[0, 1)`.
pub fn rational_ramp(x: f64) -> f64 {
    if x > 0.0 {
        let x2 = x * x;
        if x2.is_infinite() {
            1.0
        } else {
            x2 / (1.0 + x2)
        }
    } else {
        0.0
    }
}

/// Smallest `x >= 0` with `rational_ramp(x) = t`, for `t` in `[0, 1)`.
pub fn rational_ramp_inverse(t: f64) -> f64 {
    (t / (1.0 - t)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftProfile {
    Zero,
    RationalRamp,
}

impl ShiftProfile {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ShiftProfile::Zero => 0.0,
            ShiftProfile::RationalRamp => rational_ramp(x),
        }
    }
}

/// `B(x) = (x_1, x_2 + p_2(x_1), x_3 + p_3(x_2), ...)` with `p_i = M_i s(x)`.
/// The symbol is `A = B^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSpec {
    /// `M_i` at position `i - 1`; `M_1` is never read.
    pub bounds: Vec<f64>,
    pub profile: ShiftProfile,
}

impl ShiftSpec {
    pub fn new(bounds: Vec<f64>, profile: ShiftProfile) -> Result<Self> {
        if bounds.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
            return Err(OplimError::invalid("shift bounds must be finite and >= 0"));
        }
        Ok(ShiftSpec { bounds, profile })
    }

    /// `p_i(x)`, 1-based `i >= 2`.
    pub fn p(&self, i: usize, x: f64) -> f64 {
        self.bounds[i - 1] * self.profile.eval(x)
    }

    pub fn is_zero(&self) -> bool {
        self.profile == ShiftProfile::Zero || self.bounds.iter().skip(1).all(|&m| m == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiagonalSpec {
    /// `a_i = exp(-1/i^2)`.
    ExpInvSquare,
    Constant(f64),
    Values(Vec<f64>),
}

impl DiagonalSpec {
    pub fn entry(&self, i: usize) -> f64 {
        match self {
            DiagonalSpec::ExpInvSquare => (-1.0 / (i * i) as f64).exp(),
            DiagonalSpec::Constant(c) => *c,
            DiagonalSpec::Values(v) => v[i - 1],
        }
    }

    pub fn log_abs_det_limit(&self) -> Option<f64> {
        match self {
            DiagonalSpec::ExpInvSquare => Some(-std::f64::consts::PI.powi(2) / 6.0),
            DiagonalSpec::Constant(c) if c.abs() == 1.0 => Some(0.0),
            DiagonalSpec::Constant(c) if c.abs() < 1.0 => Some(f64::NEG_INFINITY),
            DiagonalSpec::Constant(_) => Some(f64::INFINITY),
            DiagonalSpec::Values(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SymbolSpec {
    Banded(BandedSpec),
    Diagonal(DiagonalSpec),
    TriangularShift(ShiftSpec),
}

impl SymbolSpec {
    pub fn identity() -> Self {
        SymbolSpec::Diagonal(DiagonalSpec::Constant(1.0))
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            SymbolSpec::Banded(_) => "banded-linear",
            SymbolSpec::Diagonal(_) => "diagonal",
            SymbolSpec::TriangularShift(_) => "triangular-shift",
        }
    }

    pub fn is_linear(&self) -> bool {
        !matches!(self, SymbolSpec::TriangularShift(_))
    }

    /// Number of coordinates the spec defines; `None` means all.
    pub fn available(&self) -> Option<usize> {
        match self {
            SymbolSpec::Banded(b) => b.available(),
            SymbolSpec::Diagonal(DiagonalSpec::Values(v)) => Some(v.len()),
            SymbolSpec::Diagonal(_) => None,
            SymbolSpec::TriangularShift(s) => Some(s.bounds.len()),
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(OplimError::invalid("truncation dimension must be >= 1"));
        }
        match self.available() {
            Some(a) if n > a => Err(OplimError::DimensionExceeded { available: a, requested: n }),
            _ => Ok(()),
        }
    }

    /// `A_n`.
    pub fn truncate(&self, n: usize) -> Result<Truncation> {
        self.check_dim(n)?;
        let matrix = match self {
            SymbolSpec::Banded(b) => b.truncate(n),
            SymbolSpec::Diagonal(d) => BandMatrix::diagonal(&(1..=n).map(|i| d.entry(i)).collect::<Vec<_>>()),
            SymbolSpec::TriangularShift(s) => {
                return Ok(Truncation {
                    n,
                    kind: TruncKind::Shift { spec: ShiftSpec { bounds: s.bounds[..n].to_vec(), profile: s.profile } },
                });
            }
        };
        let lu = BandLu::factor(&matrix).map_err(|_| OplimError::NotInvertible { n })?;
        let log_abs_det = if matrix.is_upper_triangular() || matrix.is_lower_triangular() {
            (0..n).map(|i| matrix.get(i, i).abs().ln()).sum()
        } else {
            lu.log_abs_det()
        };
        if !log_abs_det.is_finite() {
            return Err(OplimError::NotInvertible { n });
        }
        Ok(Truncation { n, kind: TruncKind::Linear { matrix, lu, log_abs_det } })
    }

    /// Smallest `M >= k` such that the first `k` output coordinates of `A`
    /// read only the first `M` inputs.
    pub fn row_finite_horizon(&self, k: usize) -> Result<usize> {
        if k == 0 {
            return Err(OplimError::invalid("horizon needs k >= 1"));
        }
        match self {
            SymbolSpec::Banded(b) => {
                let mut m = k;
                for j in 1..=k {
                    let (_, hi) = b.row_support(j).ok_or(OplimError::HorizonUndefined { k })?;
                    let last = (j..=hi.max(j)).rev().find(|&c| c == j || b.entry(j, c) != 0.0);
                    m = m.max(last.unwrap_or(j));
                }
                Ok(m)
            }
            SymbolSpec::Diagonal(_) | SymbolSpec::TriangularShift(_) => Ok(k),
        }
    }

    /// First `k` coordinates of `A y` for the full symbol; `y` must cover the horizon.
    pub fn full_prefix(&self, y: &[f64], k: usize) -> Result<Vec<f64>> {
        let h = self.row_finite_horizon(k)?;
        if y.len() < h {
            return Err(OplimError::DimensionMismatch { expected: h, got: y.len() });
        }
        Ok(match self {
            SymbolSpec::Banded(b) => (1..=k)
                .map(|i| {
                    let (lo, hi) = b.row_support(i).unwrap();
                    (lo.max(1)..=hi).map(|j| b.entry(i, j) * y[j - 1]).sum()
                })
                .collect(),
            SymbolSpec::Diagonal(d) => (1..=k).map(|i| d.entry(i) * y[i - 1]).collect(),
            SymbolSpec::TriangularShift(s) => {
                if s.bounds.len() < k {
                    return Err(OplimError::DimensionExceeded { available: s.bounds.len(), requested: k });
                }
                shift_apply(s, &y[..k])
            }
        })
    }

    /// `lim log|det A_n|` when known in closed form.
    pub fn log_abs_det_limit(&self) -> Option<f64> {
        match self {
            SymbolSpec::Banded(b) => b.log_abs_det_limit(),
            SymbolSpec::Diagonal(d) => d.log_abs_det_limit(),
            SymbolSpec::TriangularShift(_) => Some(0.0),
        }
    }
}

fn shift_apply(s: &ShiftSpec, y: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(y.len());
    for (idx, &yi) in y.iter().enumerate() {
        let v = if idx == 0 { yi } else { yi - s.p(idx + 1, x[idx - 1]) };
        x.push(v);
    }
    x
}

fn shift_invert(s: &ShiftSpec, x: &[f64]) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(idx, &xi)| if idx == 0 { xi } else { xi + s.p(idx + 1, x[idx - 1]) })
        .collect()
}

#[derive(Debug, Clone)]
enum TruncKind {
    Linear { matrix: BandMatrix, lu: BandLu, log_abs_det: f64 },
    Shift { spec: ShiftSpec },
}

/// `A_n` with its exact inverse and `log|det|`.
#[derive(Debug, Clone)]
pub struct Truncation {
    n: usize,
    kind: TruncKind,
}

impl Truncation {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, TruncKind::Linear { .. })
    }

    pub fn matrix(&self) -> Option<&BandMatrix> {
        match &self.kind {
            TruncKind::Linear { matrix, .. } => Some(matrix),
            TruncKind::Shift { .. } => None,
        }
    }

    pub fn shift(&self) -> Option<&ShiftSpec> {
        match &self.kind {
            TruncKind::Shift { spec } => Some(spec),
            TruncKind::Linear { .. } => None,
        }
    }

    /// `log|det A_n|`; 0 for the unit-triangular shift.
    pub fn log_abs_det(&self) -> f64 {
        match &self.kind {
            TruncKind::Linear { log_abs_det, .. } => *log_abs_det,
            TruncKind::Shift { .. } => 0.0,
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(OplimError::DimensionMismatch { expected: self.n, got: x.len() });
        }
        Ok(())
    }

    /// `A_n x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(match &self.kind {
            TruncKind::Linear { matrix, .. } => matrix.mul_vec(x),
            TruncKind::Shift { spec } => shift_apply(spec, x),
        })
    }

    /// `A_n^{-1} y`.
    pub fn invert(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check(y)?;
        Ok(match &self.kind {
            TruncKind::Linear { lu, .. } => lu.solve(y),
            TruncKind::Shift { spec } => shift_invert(spec, y),
        })
    }

    /// Spectral norm with a certified bracket.
    pub fn operator_norm(&self) -> Result<NormEstimate> {
        match &self.kind {
            TruncKind::Linear { matrix, .. } => Ok(spectral_norm(matrix, NORM_REL_TOL, NORM_MAX_ITER)),
            TruncKind::Shift { .. } => {
                Err(OplimError::VariantMismatch("operator norm needs a linear truncation".into()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shift(m: f64, n: usize) -> SymbolSpec {
        SymbolSpec::TriangularShift(ShiftSpec::new(vec![m; n], ShiftProfile::RationalRamp).unwrap())
    }

    #[test]
    fn example52_n2() {
        let t = SymbolSpec::Banded(BandedSpec::Example52).truncate(2).unwrap();
        assert_eq!(t.matrix().unwrap().to_dense(), vec![vec![1.0, 0.125], vec![0.0, 1.0]]);
        assert_eq!(t.log_abs_det(), 0.0);
        assert_eq!(t.invert(&[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(t.invert(&[0.0, 1.0]).unwrap(), vec![-0.125, 1.0]);
        let e = t.operator_norm().unwrap();
        assert!(e.lower > 1.0 && e.upper <= 1.125 + 1e-15);
        // exact largest singular value of [[1, 1/8], [0, 1]]
        let exact = (1.0f64 + 1.0 / 256.0).sqrt() + 1.0 / 16.0;
        assert!((e.value - exact).abs() < 1e-9);
    }

    #[test]
    fn diagonal_truncation() {
        let t = SymbolSpec::Diagonal(DiagonalSpec::Values(vec![0.5, 0.8])).truncate(2).unwrap();
        assert!((t.log_abs_det() - 0.4f64.ln()).abs() < 1e-15);
        assert_eq!(t.invert(&[1.0, 1.0]).unwrap(), vec![2.0, 1.25]);
        assert_eq!(t.operator_norm().unwrap().value, 0.8);
        let d2 = SymbolSpec::Diagonal(DiagonalSpec::Constant(2.0)).truncate(1).unwrap();
        assert_eq!(d2.apply(&[1.0]).unwrap(), vec![2.0]);
        assert_eq!(d2.invert(&[2.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn zero_shift_is_identity() {
        let s = SymbolSpec::TriangularShift(ShiftSpec::new(vec![0.3; 4], ShiftProfile::Zero).unwrap());
        let t = s.truncate(4).unwrap();
        let x = [1.0, -2.0, 3.0, 0.5];
        assert_eq!(t.apply(&x).unwrap(), x.to_vec());
        assert_eq!(t.invert(&x).unwrap(), x.to_vec());
        assert_eq!(t.log_abs_det(), 0.0);
    }

    #[test]
    fn shift_round_trip() {
        let t = shift(0.1, 2).truncate(2).unwrap();
        let x = [1.0, 0.5];
        let y = t.invert(&x).unwrap();
        assert!((y[1] - (0.5 + 0.1 * 0.5)).abs() < 1e-15);
        let back = t.apply(&y).unwrap();
        assert!((back[0] - 1.0).abs() <= 1e-12 && (back[1] - 0.5).abs() <= 1e-12);
    }

    #[test]
    fn singular_truncation_is_reported() {
        let s = SymbolSpec::Diagonal(DiagonalSpec::Values(vec![1.0, 0.0]));
        assert!(matches!(s.truncate(2), Err(OplimError::NotInvertible { n: 2 })));
    }

    #[test]
    fn horizons() {
        assert_eq!(SymbolSpec::Banded(BandedSpec::Example52).row_finite_horizon(3).unwrap(), 4);
        assert_eq!(SymbolSpec::Diagonal(DiagonalSpec::ExpInvSquare).row_finite_horizon(5).unwrap(), 5);
        assert_eq!(shift(0.1, 8).row_finite_horizon(2).unwrap(), 2);
        assert!(matches!(
            SymbolSpec::Banded(BandedSpec::GeometricTail).row_finite_horizon(1),
            Err(OplimError::HorizonUndefined { k: 1 })
        ));
    }

    #[test]
    fn exp_inv_square_band_is_a_contraction() {
        let s = SymbolSpec::Banded(BandedSpec::ExpInvSquare);
        for n in [1, 2, 4, 8, 16, 32, 64] {
            let e = s.truncate(n).unwrap().operator_norm().unwrap();
            assert!(e.upper <= 1.0, "n = {n}: {e:?}");
        }
    }

    #[test]
    fn operator_norm_identity() {
        for n in [1, 5, 64] {
            let e = SymbolSpec::identity().truncate(n).unwrap().operator_norm().unwrap();
            assert_eq!(e.value, 1.0);
        }
    }

    #[test]
    fn round_trip_all_variants() {
        let specs = vec![
            SymbolSpec::Banded(BandedSpec::Example52),
            SymbolSpec::Banded(BandedSpec::ExpInvSquare),
            SymbolSpec::Banded(BandedSpec::GeometricTail),
            SymbolSpec::Diagonal(DiagonalSpec::ExpInvSquare),
            shift(0.2, 32),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in &specs {
            for n in [1, 2, 4, 8, 16, 32] {
                let t = s.truncate(n).unwrap();
                for _ in 0..100 {
                    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
                    let back = t.invert(&t.apply(&x).unwrap()).unwrap();
                    let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    assert!(err <= 1e-12, "{} n={n}: {err}", s.variant_name());
                }
            }
        }
    }

    proptest! {
        #[test]
        fn prefix_is_stable_past_horizon(k in 1usize..5, extra in 0usize..6, seed in 0u64..500) {
            let s = SymbolSpec::Banded(BandedSpec::Example52);
            let h = s.row_finite_horizon(k).unwrap();
            let n = h + extra;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a_h = s.truncate(h).unwrap().apply(&x[..h]).unwrap();
            let a_n = s.truncate(n).unwrap().apply(&x).unwrap();
            let full = s.full_prefix(&x, k).unwrap();
            prop_assert_eq!(&a_h[..k], &a_n[..k]);
            prop_assert_eq!(&a_n[..k], &full[..]);
        }
    }
}
