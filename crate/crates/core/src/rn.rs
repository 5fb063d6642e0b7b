//! Radon–Nikodym derivatives `h^{A_n} = d(mu_n o A_n^{-1}) / d mu_n`.
//!
//! For a product density `eta` and an invertible `A_n`,
//! `h(x) = |det A_n|^{-1} eta(A_n^{-1} x) / eta(x)`, evaluated in log space.
//! In the gaussian-linear case this is
//! `|det A|^{-1} exp((|x|^2 - |A^{-1} x|^2) / 2)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::density::DensityModel;
use crate::error::{OplimError, Result};
use crate::linalg::BandCholesky;
use crate::measure::{CylinderSet, McEstimate, MonteCarlo, ProductMeasure};
use crate::symbol::{SymbolSpec, Truncation};

/// `c` in the ess-sup test `c^2 I - A^T A > 0`.
pub const CONTRACTION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalRule {
    GaussianLinear,
    DensityRatio,
}

#[derive(Debug, Clone)]
pub struct RnDerivative {
    trunc: Truncation,
    factors: Vec<DensityModel>,
    measure: ProductMeasure,
    rule: EvalRule,
}

impl RnDerivative {
    pub fn new(spec: &SymbolSpec, measure: &ProductMeasure, n: usize) -> Result<Self> {
        let trunc = spec.truncate(n)?;
        Self::from_truncation(trunc, measure)
    }

    pub fn from_truncation(trunc: Truncation, measure: &ProductMeasure) -> Result<Self> {
        let n = trunc.n();
        let factors: Vec<DensityModel> = measure.factors(n)?.into_iter().cloned().collect();
        let rule = if trunc.is_linear() && measure.is_gaussian(n) {
            EvalRule::GaussianLinear
        } else {
            EvalRule::DensityRatio
        };
        Ok(RnDerivative { trunc, factors, measure: measure.clone(), rule })
    }

    pub fn n(&self) -> usize {
        self.trunc.n()
    }

    pub fn truncation(&self) -> &Truncation {
        &self.trunc
    }

    pub fn measure(&self) -> &ProductMeasure {
        &self.measure
    }

    pub fn rule(&self) -> EvalRule {
        self.rule
    }

    /// `ln h(x)`.
    pub fn ln_eval(&self, x: &[f64]) -> Result<f64> {
        let y = self.trunc.invert(x)?;
        Ok(self.ln_eval_with_inverse(x, &y))
    }

    fn ln_eval_with_inverse(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.rule {
            EvalRule::GaussianLinear => {
                let q: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a + b)).sum();
                -self.trunc.log_abs_det() + 0.5 * q
            }
            EvalRule::DensityRatio => {
                let mut s = -self.trunc.log_abs_det();
                for ((d, &xi), &yi) in self.factors.iter().zip(x).zip(y) {
                    if xi != yi {
                        s += d.ln_pdf(yi) - d.ln_pdf(xi);
                    }
                }
                s
            }
        }
    }

    /// `h(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.ln_eval(x)?.exp())
    }

    fn require_gaussian(&self) -> Result<()> {
        if self.rule != EvalRule::GaussianLinear {
            return Err(OplimError::VariantMismatch(
                "closed-form gaussian analysis needs a linear symbol over the gaussian product".into(),
            ));
        }
        Ok(())
    }
}

/// Essential supremum of `h`: finite value or `+inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EssSup {
    Finite(f64),
    Infinite,
}

impl EssSup {
    pub fn is_finite(&self) -> bool {
        matches!(self, EssSup::Finite(_))
    }

    pub fn value(&self) -> f64 {
        match self {
            EssSup::Finite(v) => *v,
            EssSup::Infinite => f64::INFINITY,
        }
    }
}

impl Serialize for EssSup {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EssSup::Finite(v) => s.serialize_f64(*v),
            EssSup::Infinite => s.serialize_str("+inf"),
        }
    }
}

/// `h` is bounded iff `I - A^{-T} A^{-1} <= 0` iff `|A| <= 1`; then the
/// supremum `|det A|^{-1}` sits at the origin. Decided by a Cholesky attempt on
/// `(1 + tol)^2 I - A^T A`.
pub fn ess_sup_gaussian_linear(h: &RnDerivative) -> Result<EssSup> {
    h.require_gaussian()?;
    let a = h.trunc.matrix().unwrap();
    let c = 1.0 + CONTRACTION_TOL;
    let shifted = a.gram().shifted_negation(c * c);
    Ok(match BandCholesky::factor(&shifted) {
        Some(_) => EssSup::Finite((-h.trunc.log_abs_det()).exp()),
        None => EssSup::Infinite,
    })
}

/// `int h^2 d mu_n = |det A|^{-2} det(2 A^{-T} A^{-1} - I)^{-1/2}
/// = |det A|^{-1} det(2 I - A^T A)^{-1/2}`.
pub fn second_moment_gaussian(h: &RnDerivative) -> Result<f64> {
    h.require_gaussian()?;
    let a = h.trunc.matrix().unwrap();
    let m = a.gram().shifted_negation(2.0);
    let chol = BandCholesky::factor(&m).ok_or(OplimError::MomentDivergent { n: h.n() })?;
    Ok((-h.trunc.log_abs_det() - 0.5 * chol.log_det()).exp())
}

/// `int h d mu_n` and `int h^2 d mu_n` on common samples.
pub fn moments_mc(h: &RnDerivative, mc: &MonteCarlo) -> Result<(McEstimate, McEstimate)> {
    let est = mc.integrate_many(&h.measure, h.n(), 2, |x, out| {
        let v = h.ln_eval(x).map(f64::exp).unwrap_or(f64::NAN);
        out[0] = v;
        out[1] = v * v;
    })?;
    Ok((est[0], est[1]))
}

/// Test function `g` for the transport identity.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunction {
    One,
    Indicator { set: CylinderSet },
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::One => 1.0,
            TestFunction::Indicator { set } => {
                if set.contains(x) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            TestFunction::One => "g = 1".into(),
            TestFunction::Indicator { set } => format!("g = indicator of a box in R^{}", set.k()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportReport {
    pub n: usize,
    pub function: String,
    /// `int g h d mu_n`.
    pub lhs: McEstimate,
    /// `int g o A_n d mu_n` on an independent sample stream.
    pub rhs: McEstimate,
    /// `(lhs - rhs) / sqrt(se_lhs^2 + se_rhs^2)`.
    pub z: f64,
    /// Paired difference `g h - g o A_n` on the lhs samples.
    pub difference: McEstimate,
    /// Paired difference within 3 of its own standard errors.
    pub paired_pass: bool,
    /// Closed-form `int g o A_n d mu_n` when available.
    pub oracle: Option<f64>,
    /// Two-sided check (and the oracle, when present) within 3 combined standard errors.
    pub pass: bool,
}

const RHS_STREAM: u64 = 0x5248_5321;

/// Checks `int g h d mu = int g o A d mu`, each side estimated with `mc.samples`
/// draws from independent streams. The paired difference on common samples
/// is reported alongside.
pub fn transport_check(h: &RnDerivative, g: &TestFunction, mc: &MonteCarlo) -> Result<TransportReport> {
    if let TestFunction::Indicator { set } = g {
        if set.k() > h.n() {
            return Err(OplimError::DimensionMismatch { expected: h.n(), got: set.k() });
        }
    }
    let est = mc.integrate_many(&h.measure, h.n(), 2, |x, out| {
        let (lhs, rhs) = match (h.trunc.invert(x), h.trunc.apply(x)) {
            (Ok(y), Ok(ax)) => (g.eval(x) * h.ln_eval_with_inverse(x, &y).exp(), g.eval(&ax)),
            _ => (f64::NAN, f64::NAN),
        };
        out[0] = lhs;
        out[1] = lhs - rhs;
    })?;
    let (lhs, difference) = (est[0], est[1]);
    let rhs = mc.derived(RHS_STREAM).integrate(&h.measure, h.n(), |x| match h.trunc.apply(x) {
        Ok(ax) => g.eval(&ax),
        Err(_) => f64::NAN,
    })?;
    let combined = lhs.stderr.hypot(rhs.stderr);
    let gap = lhs.value - rhs.value;
    let z = if combined > 0.0 { gap / combined } else if gap == 0.0 { 0.0 } else { f64::INFINITY };
    let oracle = transport_oracle(h, g)?;
    let mut pass = z.abs() <= 3.0;
    if let Some(o) = oracle {
        pass &= rhs.agrees_with_value(o, 3.0) || (rhs.value - o).abs() <= 1e-12;
    }
    let paired_pass = difference.value.abs() <= 3.0 * difference.stderr;
    Ok(TransportReport { n: h.n(), function: g.name(), lhs, rhs, z, difference, paired_pass, oracle, pass })
}

/// `mu_n(A_n^{-1}(box))` for diagonal symbols: a product of factor interval masses.
fn transport_oracle(h: &RnDerivative, g: &TestFunction) -> Result<Option<f64>> {
    let set = match g {
        TestFunction::One => return Ok(Some(1.0)),
        TestFunction::Indicator { set } => set,
    };
    let Some(a) = h.trunc.matrix().filter(|m| m.is_diagonal()) else {
        return Ok(None);
    };
    let mut total = 0.0;
    for b in set.boxes() {
        let mut p = 1.0;
        for i in 0..b.dim() {
            let s = a.get(i, i);
            let (lo, hi) = if s > 0.0 { (b.lo[i] / s, b.hi[i] / s) } else { (b.hi[i] / s, b.lo[i] / s) };
            p *= h.factors[i].interval_mass(lo, hi);
        }
        total += p;
    }
    Ok(Some(total))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupBound {
    pub n: usize,
    /// `prod_{i <= n} alpha_i`.
    pub upper: f64,
    /// Largest `h` seen on the deterministic battery.
    pub lower: f64,
    pub argmax: Vec<f64>,
    pub battery_size: usize,
}

/// Points used to probe `sup h`: the origin, `+-t e_i` for a few `t`, and
/// `samples` draws from `mu_n`.
pub fn probe_battery(measure: &ProductMeasure, n: usize, samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut pts = vec![vec![0.0; n]];
    for i in 0..n {
        for t in [-2.0, -1.0, -0.5, -0.1, 0.1, 0.5, 1.0, 2.0] {
            let mut p = vec![0.0; n];
            p[i] = t;
            pts.push(p);
        }
    }
    let factors = measure.factors(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..samples {
        pts.push(factors.iter().map(|d| d.sample(&mut rng)).collect());
    }
    Ok(pts)
}

/// Certified `ess sup h^{A_n} <= prod alpha_i` for the triangular shift over
/// even-step factors, with a sampled lower bound.
pub fn sup_bound_triangular(h: &RnDerivative, seed: u64) -> Result<SupBound> {
    if h.trunc.shift().is_none() {
        return Err(OplimError::VariantMismatch("sup bound needs a triangular-shift symbol".into()));
    }
    let mut upper = 1.0;
    for d in &h.factors {
        match d.as_even_step() {
            Some(s) => upper *= s.alpha,
            None => {
                return Err(OplimError::VariantMismatch(format!(
                    "sup bound needs even-step factors, found {}",
                    d.kind()
                )))
            }
        }
    }
    let pts = probe_battery(&h.measure, h.n(), 10_000, seed)?;
    let mut lower = f64::NEG_INFINITY;
    let mut argmax = Vec::new();
    for p in &pts {
        let v = h.eval(p)?;
        if v > lower {
            lower = v;
            argmax = p.clone();
        }
    }
    Ok(SupBound { n: h.n(), upper, lower, argmax, battery_size: pts.len() })
}
