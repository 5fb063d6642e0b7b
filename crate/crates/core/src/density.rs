//! One-dimensional densities used as tensor factors.
//!
//! Four families are supported: the standard gaussian, even step densities
//! `rho(x) = peak * alpha^{-n}` on `n W <= |x| < (n+1) W`, step densities with a
//! continuous hump spliced into `[a, b]`, and the shifted/rescaled variant that
//! brings a hump density back under 1 while keeping unit mass.
//!
//! Every family has a closed-form CDF and an exact inverse CDF, so masses of
//! intervals are computed exactly and sampling never needs tail truncation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{OplimError, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Uniform draw from the open interval (0, 1).
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Even, piecewise-constant density, non-increasing on `[0, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvenStep {
    pub alpha: f64,
    pub width: f64,
}

impl EvenStep {
    pub fn new(alpha: f64, width: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(OplimError::invalid(format!("step ratio must be > 1, got {alpha}")));
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(OplimError::invalid(format!("step width must be > 0, got {width}")));
        }
        Ok(EvenStep { alpha, width })
    }

    /// Value on the first step; equals 1 when `width = (1 - 1/alpha) / 2`.
    pub fn peak(&self) -> f64 {
        (1.0 - self.alpha.recip()) / (2.0 * self.width)
    }

    fn step_index(&self, x: f64) -> f64 {
        (x.abs() / self.width).floor()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        self.peak().ln() - self.step_index(x) * self.alpha.ln()
    }

    /// Mass of `[t, inf)` for `t >= 0`.
    fn upper_tail(&self, t: f64) -> f64 {
        let n = self.step_index(t);
        let level = self.alpha.powf(-n);
        0.5 * level - (t - n * self.width) * self.peak() * level
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            self.upper_tail(-x)
        } else {
            1.0 - self.upper_tail(x)
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let tail = u.min(1.0 - u);
        if tail >= 0.5 {
            return 0.0;
        }
        let ln_alpha = self.alpha.ln();
        let mut n = ((2.0 * tail).ln() / -ln_alpha).floor().max(0.0);
        // guard against rounding at step boundaries
        if 0.5 * self.alpha.powf(-n) < tail {
            n = (n - 1.0).max(0.0);
        }
        let level = self.alpha.powf(-n);
        let offset = ((0.5 * level - tail) / (self.peak() * level)).clamp(0.0, self.width);
        let magnitude = n * self.width + offset;
        if u < 0.5 {
            -magnitude
        } else {
            magnitude
        }
    }

    /// Closed-form total mass: `2 W peak / (1 - 1/alpha)`.
    pub fn mass(&self) -> f64 {
        2.0 * self.width * self.peak() / (1.0 - self.alpha.recip())
    }
}

/// Continuous piecewise-linear profile on `[knots[0].0, knots[last].0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    pub knots: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(OplimError::invalid("profile needs at least two knots"));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(OplimError::invalid("profile knots must be strictly increasing"));
        }
        if knots.iter().any(|&(x, y)| !x.is_finite() || !(y > 0.0 && y.is_finite())) {
            return Err(OplimError::invalid("profile values must be finite and positive"));
        }
        Ok(PiecewiseLinear { knots })
    }

    pub fn start(&self) -> f64 {
        self.knots[0].0
    }

    pub fn end(&self) -> f64 {
        self.knots[self.knots.len() - 1].0
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = &self.knots;
        if x <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x <= x1 {
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            }
        }
        k[k.len() - 1].1
    }

    /// Exact integral over `[lo, hi]` intersected with the support.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let lo = lo.max(self.start());
        let hi = hi.min(self.end());
        if hi <= lo {
            return 0.0;
        }
        self.knots
            .windows(2)
            .map(|w| {
                let (x0, x1) = (w[0].0.max(lo), w[1].0.min(hi));
                if x1 <= x0 {
                    0.0
                } else {
                    0.5 * (x1 - x0) * (self.eval(x0) + self.eval(x1))
                }
            })
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.integral(self.start(), self.end())
    }

    /// Smallest `x` with `integral(start, x) = mass`.
    pub fn inverse_cumulative(&self, mass: f64) -> f64 {
        let mut remaining = mass.max(0.0);
        for w in self.knots.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            let seg = 0.5 * (x1 - x0) * (y0 + y1);
            if remaining <= seg {
                let slope = (y1 - y0) / (x1 - x0);
                let disc = (y0 * y0 + 2.0 * slope * remaining).max(0.0);
                let d = 2.0 * remaining / (y0 + disc.sqrt());
                return (x0 + d).min(x1);
            }
            remaining -= seg;
        }
        self.end()
    }

    pub fn max_value(&self) -> f64 {
        self.knots.iter().map(|k| k.1).fold(f64::MIN, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.knots.iter().map(|k| k.1).fold(f64::MAX, f64::min)
    }

    pub fn argmax(&self) -> f64 {
        self.knots.iter().fold(self.knots[0], |best, &k| if k.1 > best.1 { k } else { best }).0
    }
}

/// Step density with `[a, b]` replaced by a continuous profile of equal mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumpDensity {
    pub base: EvenStep,
    pub profile: PiecewiseLinear,
}

impl HumpDensity {
    pub fn a(&self) -> f64 {
        self.profile.start()
    }

    pub fn b(&self) -> f64 {
        self.profile.end()
    }

    fn base_mass(&self) -> f64 {
        self.base.cdf(self.b()) - self.base.cdf(self.a())
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x >= self.a() && x <= self.b() {
            self.profile.eval(x)
        } else {
            self.base.pdf(x)
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x >= self.a() && x <= self.b() {
            self.profile.eval(x).ln()
        } else {
            self.base.ln_pdf(x)
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < self.a() {
            self.base.cdf(x)
        } else if x <= self.b() {
            self.base.cdf(self.a()) + self.profile.integral(self.a(), x)
        } else {
            self.base.cdf(x) - self.base_mass() + self.profile.total()
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let fa = self.base.cdf(self.a());
        let hump = self.profile.total();
        if u < fa {
            self.base.quantile(u)
        } else if u <= fa + hump {
            self.profile.inverse_cumulative(u - fa)
        } else {
            self.base.quantile(u - hump + self.base_mass())
        }
    }

    pub fn mass(&self) -> f64 {
        self.base.mass() - self.base_mass() + self.profile.total()
    }
}

/// `t <= 0`: `inner(t) / delta`; `[0, x0]`: 1; `t > x0`: `inner(t - x0) / delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step4Density {
    pub inner: Box<DensityModel>,
    pub delta: f64,
    pub x0: f64,
}

impl Step4Density {
    pub fn pdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            self.inner.pdf(t) / self.delta
        } else if t <= self.x0 {
            1.0
        } else {
            self.inner.pdf(t - self.x0) / self.delta
        }
    }

    pub fn ln_pdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            self.inner.ln_pdf(t) - self.delta.ln()
        } else if t <= self.x0 {
            0.0
        } else {
            self.inner.ln_pdf(t - self.x0) - self.delta.ln()
        }
    }

    pub fn cdf(&self, t: f64) -> f64 {
        let f0 = self.inner.cdf(0.0);
        if t < 0.0 {
            self.inner.cdf(t) / self.delta
        } else if t <= self.x0 {
            f0 / self.delta + t
        } else {
            f0 / self.delta + self.x0 + (self.inner.cdf(t - self.x0) - f0) / self.delta
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let f0 = self.inner.cdf(0.0);
        let left = f0 / self.delta;
        if u < left {
            self.inner.quantile(u * self.delta)
        } else if u <= left + self.x0 {
            u - left
        } else {
            let v = (f0 + (u - left - self.x0) * self.delta).min(1.0 - f64::EPSILON);
            self.x0 + self.inner.quantile(v)
        }
    }
}

/// A one-dimensional probability density on the real line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DensityModel {
    Gaussian,
    EvenStep(EvenStep),
    HumpModified(HumpDensity),
    Step4Normalized(Step4Density),
}

impl DensityModel {
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            DensityModel::Gaussian => (-0.5 * x * x - LN_SQRT_2PI).exp(),
            DensityModel::EvenStep(s) => s.pdf(x),
            DensityModel::HumpModified(h) => h.pdf(x),
            DensityModel::Step4Normalized(s) => s.pdf(x),
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match self {
            DensityModel::Gaussian => -0.5 * x * x - LN_SQRT_2PI,
            DensityModel::EvenStep(s) => s.ln_pdf(x),
            DensityModel::HumpModified(h) => h.ln_pdf(x),
            DensityModel::Step4Normalized(s) => s.ln_pdf(x),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            DensityModel::Gaussian => 0.5 * erfc(-x / std::f64::consts::SQRT_2),
            DensityModel::EvenStep(s) => s.cdf(x),
            DensityModel::HumpModified(h) => h.cdf(x),
            DensityModel::Step4Normalized(s) => s.cdf(x),
        }
    }

    /// Inverse CDF for `u` in (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            DensityModel::Gaussian => Normal::standard().inverse_cdf(u),
            DensityModel::EvenStep(s) => s.quantile(u),
            DensityModel::HumpModified(h) => h.quantile(u),
            DensityModel::Step4Normalized(s) => s.quantile(u),
        }
    }

    /// Exact probability of `[lo, hi)`; infinite endpoints allowed.
    pub fn interval_mass(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let upper = if hi == f64::INFINITY { 1.0 } else { self.cdf(hi) };
        let lower = if lo == f64::NEG_INFINITY { 0.0 } else { self.cdf(lo) };
        (upper - lower).max(0.0)
    }

    /// Closed-form total mass.
    pub fn mass(&self) -> f64 {
        match self {
            DensityModel::Gaussian => 1.0,
            DensityModel::EvenStep(s) => s.mass(),
            DensityModel::HumpModified(h) => h.mass(),
            DensityModel::Step4Normalized(s) => s.x0 + s.inner.mass() / s.delta,
        }
    }

    /// Supremum of the density over the real line.
    pub fn sup(&self) -> f64 {
        match self {
            DensityModel::Gaussian => (-LN_SQRT_2PI).exp(),
            DensityModel::EvenStep(s) => s.peak(),
            DensityModel::HumpModified(h) => h.profile.max_value().max(h.base.peak()),
            DensityModel::Step4Normalized(s) => (s.inner.sup() / s.delta).max(1.0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            DensityModel::Gaussian => rng.sample(StandardNormal),
            other => other.quantile(open_unit(rng)),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DensityModel::Gaussian => "gaussian",
            DensityModel::EvenStep(_) => "even-step",
            DensityModel::HumpModified(_) => "hump-modified",
            DensityModel::Step4Normalized(_) => "step4-normalized",
        }
    }

    pub fn as_even_step(&self) -> Option<&EvenStep> {
        match self {
            DensityModel::EvenStep(s) => Some(s),
            _ => None,
        }
    }

    /// Checks the parameters of a deserialized density.
    pub fn validate(&self) -> Result<()> {
        match self {
            DensityModel::Gaussian => Ok(()),
            DensityModel::EvenStep(s) => EvenStep::new(s.alpha, s.width).map(|_| ()),
            DensityModel::HumpModified(h) => {
                EvenStep::new(h.base.alpha, h.base.width)?;
                PiecewiseLinear::new(h.profile.knots.clone())?;
                let d = DensityModel::HumpModified(h.clone());
                check_mass(&d)
            }
            DensityModel::Step4Normalized(s) => {
                s.inner.validate()?;
                if !(s.delta > 0.0 && s.x0 >= 0.0) {
                    return Err(OplimError::invalid("step-4 density needs delta > 0, x0 >= 0"));
                }
                check_mass(self)
            }
        }
    }
}

fn check_mass(d: &DensityModel) -> Result<()> {
    let m = d.mass();
    if (m - 1.0).abs() > 1e-12 {
        return Err(OplimError::invalid(format!("{} density has mass {m}, expected 1", d.kind())));
    }
    Ok(())
}

/// Even step density with ratio `alpha` and width `(1 - 1/alpha) / 2`, so that
/// the first step has value 1 and the total mass is exactly 1.
pub fn build_step_density(alpha: f64) -> Result<DensityModel> {
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(OplimError::invalid(format!("step ratio must be > 1, got {alpha}")));
    }
    Ok(DensityModel::EvenStep(EvenStep::new(alpha, 0.5 * (1.0 - alpha.recip()))?))
}

/// Splices a tent profile into `[0, b]` of an even step density.
///
/// The tent is `v` at both ends and `r v` at `b / 2`, with `v` fixed by mass
/// matching: `v (1 + r) / 2 * b = int_0^b base`. Its left-to-right ratio is exactly
/// `r`, and `phi(b)` is its minimum.
pub fn build_hump(base: &DensityModel, b: f64, r: f64) -> Result<DensityModel> {
    let step = base.as_even_step().ok_or_else(|| {
        OplimError::ConstructionFailed(format!("hump needs an even-step base, got {}", base.kind()))
    })?;
    if !(b > 0.0 && b < step.width) {
        return Err(OplimError::ConstructionFailed(format!(
            "hump end b = {b} must lie in (0, {}) (first step)",
            step.width
        )));
    }
    if !(r >= 1.0 && r.is_finite()) {
        return Err(OplimError::ConstructionFailed(format!(
            "hump ratio r = {r} < 1: the profile minimum cannot sit at b while matching mass"
        )));
    }
    let target = step.cdf(b) - step.cdf(0.0);
    let v = 2.0 * target / (b * (1.0 + r));
    let profile = PiecewiseLinear::new(vec![(0.0, v), (0.5 * b, r * v), (b, v)])
        .map_err(|e| OplimError::ConstructionFailed(e.to_string()))?;
    let hump = HumpDensity { base: *step, profile };
    let mismatch = (hump.profile.total() - target).abs();
    if mismatch > 1e-15 {
        return Err(OplimError::ConstructionFailed(format!(
            "profile mass differs from base mass on [0, b] by {mismatch:e}"
        )));
    }
    Ok(DensityModel::HumpModified(hump))
}

/// Rescales a density whose supremum `delta` exceeds 1 into one bounded by 1:
/// the left half is divided by `delta`, a plateau of height 1 is inserted on
/// `[0, x0]` with `x0 = 1 - 1/delta`, and the right half follows, shifted by `x0`.
pub fn normalize_step4(d: &DensityModel) -> DensityModel {
    let delta = d.sup();
    if delta <= 1.0 {
        return d.clone();
    }
    let x0 = 1.0 - d.mass() / delta;
    DensityModel::Step4Normalized(Step4Density { inner: Box::new(d.clone()), delta, x0 })
}

/// Beyond this index `1 + 2^{-i}` rounds to 1 in double precision.
pub const MAX_GEOMETRIC_FACTORS: usize = 52;

/// How the step ratios `alpha_i` are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaRule {
    /// `alpha_i = 1 + 2^{-i}`.
    Geometric,
    Values(Vec<f64>),
}

impl AlphaRule {
    fn alpha(&self, i: usize) -> Result<f64> {
        match self {
            AlphaRule::Geometric if i > MAX_GEOMETRIC_FACTORS => Err(OplimError::DimensionExceeded {
                available: MAX_GEOMETRIC_FACTORS,
                requested: i,
            }),
            AlphaRule::Geometric => Ok(1.0 + 0.5f64.powi(i as i32)),
            AlphaRule::Values(v) => v
                .get(i - 1)
                .copied()
                .ok_or(OplimError::DimensionExceeded { available: v.len(), requested: i }),
        }
    }

    /// `prod_{i >= 1} alpha_i` (for explicit lists, the product of the list).
    pub fn infinite_product(&self) -> f64 {
        match self {
            AlphaRule::Geometric => (1..=64).map(|i| (1.0 + 0.5f64.powi(i)).ln()).sum::<f64>().exp(),
            AlphaRule::Values(v) => v.iter().map(|a| a.ln()).sum::<f64>().exp(),
        }
    }
}

/// How the `beta_{3i-1}` budgets are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaRule {
    /// `beta_{3i-1} = 2^{-i}`.
    Geometric,
    Values(Vec<f64>),
}

impl BetaRule {
    fn beta(&self, hump: usize) -> Result<f64> {
        match self {
            BetaRule::Geometric => Ok(0.5f64.powi(hump as i32)),
            BetaRule::Values(v) => v
                .get(hump - 1)
                .copied()
                .ok_or(OplimError::DimensionExceeded { available: v.len(), requested: hump }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumpConfig {
    pub r: f64,
    pub betas: BetaRule,
    /// `b = b_fraction * M_{3i-1}`.
    #[serde(default = "default_b_fraction")]
    pub b_fraction: f64,
    /// Apply the bounded-by-one renormalization to each hump density.
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_b_fraction() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyConfig {
    pub n_factors: usize,
    pub alphas: AlphaRule,
    #[serde(default)]
    pub hump: Option<HumpConfig>,
}

impl FamilyConfig {
    /// Plain step family with `alpha_i = 1 + 2^{-i}`.
    pub fn steps(n_factors: usize) -> Self {
        FamilyConfig { n_factors, alphas: AlphaRule::Geometric, hump: None }
    }

    /// Full hump family: `alpha_i = 1 + 2^{-i}`, `beta_{3i-1} = 2^{-i}`, `r = 3`.
    pub fn appendix(n_factors: usize) -> Self {
        FamilyConfig {
            n_factors,
            alphas: AlphaRule::Geometric,
            hump: Some(HumpConfig {
                r: 3.0,
                betas: BetaRule::Geometric,
                b_fraction: 0.5,
                normalize: true,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HumpSite {
    /// Hump counter `i`; the factor index is `3i - 1`.
    pub counter: usize,
    pub index: usize,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
    pub profile: PiecewiseLinear,
    /// Hump density before the bounded-by-one renormalization.
    pub hump_density: DensityModel,
    /// `(delta, x0)` when renormalized.
    pub step4: Option<(f64, f64)>,
}

impl HumpSite {
    /// Maps a point of the profile's domain into the final density's coordinates.
    pub fn to_final(&self, x: f64) -> f64 {
        x + self.step4.map_or(0.0, |(_, x0)| x0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rescale {
    pub counter: usize,
    pub k: u64,
}

/// The sequences `alpha_i`, `M_i`, `rho_i`, `eta_i` and hump data of a density family.
#[derive(Debug, Clone, Serialize)]
pub struct DensityFamilyPlan {
    pub config: FamilyConfig,
    alphas: Vec<f64>,
    widths: Vec<f64>,
    shift_bounds: Vec<f64>,
    bases: Vec<DensityModel>,
    densities: Vec<DensityModel>,
    humps: Vec<HumpSite>,
    rescales: Vec<Rescale>,
}

impl DensityFamilyPlan {
    /// Step densities only: `M_i = W_i = (1 - 1/alpha_i) / 2`.
    pub fn step1(config: &FamilyConfig) -> Result<Self> {
        if config.n_factors == 0 {
            return Err(OplimError::invalid("a density family needs at least one factor"));
        }
        let mut alphas = Vec::with_capacity(config.n_factors);
        let mut bases = Vec::with_capacity(config.n_factors);
        for i in 1..=config.n_factors {
            let alpha = config.alphas.alpha(i)?;
            alphas.push(alpha);
            bases.push(build_step_density(alpha)?);
        }
        let widths: Vec<f64> = bases.iter().map(|b| b.as_even_step().unwrap().width).collect();
        Ok(DensityFamilyPlan {
            config: config.clone(),
            shift_bounds: widths.clone(),
            widths,
            alphas,
            densities: bases.clone(),
            bases,
            humps: Vec::new(),
            rescales: Vec::new(),
        })
    }

    /// Runs the complete construction: step densities, then for every hump
    /// counter `i` with `3i - 1 <= n_factors` the shift-bound rescale, the hump,
    /// and (optionally) the bounded-by-one renormalization.
    pub fn build(config: &FamilyConfig) -> Result<Self> {
        let mut plan = Self::step1(config)?;
        let Some(hump) = config.hump.clone() else {
            return Ok(plan);
        };
        if !(hump.b_fraction > 0.0 && hump.b_fraction < 1.0) {
            return Err(OplimError::invalid("b_fraction must lie in (0, 1)"));
        }
        let product = config.alphas.infinite_product();
        if hump.r <= product {
            return Err(OplimError::invalid(format!(
                "hump ratio r = {} must exceed prod alpha_i = {product}",
                hump.r
            )));
        }
        let mut counter = 1;
        while 3 * counter - 1 <= config.n_factors {
            plan = plan.rescale_step2(counter)?;
            let index = 3 * counter - 1;
            let m = plan.shift_bound(index);
            let b = hump.b_fraction * m;
            let hump_density = build_hump(&plan.bases[index - 1], b, hump.r)?;
            let profile = match &hump_density {
                DensityModel::HumpModified(h) => h.profile.clone(),
                _ => unreachable!(),
            };
            let (final_density, step4) = if hump.normalize {
                let d = normalize_step4(&hump_density);
                let s4 = match &d {
                    DensityModel::Step4Normalized(s) => Some((s.delta, s.x0)),
                    _ => None,
                };
                (d, s4)
            } else {
                (hump_density.clone(), None)
            };
            plan.densities[index - 1] = final_density;
            plan.humps.push(HumpSite {
                counter,
                index,
                beta: hump.betas.beta(counter)?,
                a: 0.0,
                b,
                profile,
                hump_density,
                step4,
            });
            counter += 1;
        }
        Ok(plan)
    }

    /// If `3 r^2 M_{3i-1} >= beta_{3i-1}`, divides `M_n` for every `n >= 3i - 1`
    /// by the smallest integer `k` with `3 r^2 M_{3i-1} / k < beta_{3i-1}`.
    /// The step densities themselves are left unchanged.
    pub fn rescale_step2(&self, counter: usize) -> Result<Self> {
        let hump = self
            .config
            .hump
            .as_ref()
            .ok_or_else(|| OplimError::VariantMismatch("plan has no hump configuration".into()))?;
        let index = 3 * counter - 1;
        if counter == 0 || index > self.len() {
            return Err(OplimError::DimensionExceeded { available: self.len(), requested: index });
        }
        let beta = hump.betas.beta(counter)?;
        let load = 3.0 * hump.r * hump.r * self.shift_bound(index);
        let mut next = self.clone();
        if load < beta {
            return Ok(next);
        }
        let mut k = (load / beta).floor().max(1.0) as u64;
        while load / (k as f64) >= beta {
            k += 1;
        }
        for m in next.shift_bounds[index - 1..].iter_mut() {
            *m /= k as f64;
        }
        next.rescales.push(Rescale { counter, k });
        Ok(next)
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// `alpha_i`, 1-based.
    pub fn alpha(&self, i: usize) -> f64 {
        self.alphas[i - 1]
    }

    /// Step width `W_i` of `rho_i`, 1-based.
    pub fn width(&self, i: usize) -> f64 {
        self.widths[i - 1]
    }

    /// Shift bound `M_i`, 1-based.
    pub fn shift_bound(&self, i: usize) -> f64 {
        self.shift_bounds[i - 1]
    }

    pub fn shift_bounds(&self) -> &[f64] {
        &self.shift_bounds
    }

    /// The step density `rho_i`, 1-based.
    pub fn base(&self, i: usize) -> &DensityModel {
        &self.bases[i - 1]
    }

    /// The final factor density `eta_i`, 1-based.
    pub fn density(&self, i: usize) -> &DensityModel {
        &self.densities[i - 1]
    }

    pub fn densities(&self) -> &[DensityModel] {
        &self.densities
    }

    pub fn humps(&self) -> &[HumpSite] {
        &self.humps
    }

    pub fn hump_at(&self, index: usize) -> Option<&HumpSite> {
        self.humps.iter().find(|h| h.index == index)
    }

    pub fn rescales(&self) -> &[Rescale] {
        &self.rescales
    }

    pub fn r(&self) -> Option<f64> {
        self.config.hump.as_ref().map(|h| h.r)
    }

    /// `r^2 (b - a + 2 M) + alpha^2` for a hump site.
    pub fn hump_l2_factor(&self, site: &HumpSite) -> f64 {
        let r = self.r().unwrap_or(1.0);
        r * r * (site.b - site.a + 2.0 * self.shift_bound(site.index)) + self.alpha(site.index).powi(2)
    }

    /// Second-moment bound for `h^{A_n}`: `alpha_i^2` for every shifted non-hump
    /// factor and the hump factor above for every hump factor up to `n`.
    pub fn l2_bound(&self, n: usize) -> f64 {
        (2..=n.min(self.len()))
            .map(|i| match self.hump_at(i) {
                Some(site) => self.hump_l2_factor(site),
                None => self.alpha(i).powi(2),
            })
            .product()
    }

    /// Evaluates every construction condition.
    pub fn validate(&self) -> ConditionReport {
        validators::run(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub id: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub checks: Vec<ConditionCheck>,
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, id: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }
}

/// Largest `rho(x + eps) / rho(x)` over a grid of `x` in `[-L, L]`, every
/// breakpoint `+-nW` (and its neighbours) in range, and `eps` in `[0, max_shift]`.
pub fn step_ratio_grid_max(step: &EvenStep, max_shift: f64) -> f64 {
    let w = step.width;
    let span = 5.0f64.min(64.0 * w);
    let dx = 1e-3f64.min(w / 8.0);
    let mut xs: Vec<f64> = Vec::new();
    let nx = (2.0 * span / dx).round() as usize;
    xs.extend((0..=nx).map(|j| -span + j as f64 * dx));
    let nb = (span / w).floor() as i64;
    for n in -nb..=nb {
        let p = n as f64 * w;
        xs.extend([p - 1e-9 * w, p + 1e-9 * w]);
    }
    let ne = ((max_shift / 1e-3).ceil() as usize).clamp(16, 256);
    let eps: Vec<f64> = (0..=ne).map(|j| max_shift * j as f64 / ne as f64).collect();
    // points within rounding distance of a breakpoint are a null set
    let on_break = |t: f64| {
        let q = t / w;
        (q - q.round()).abs() < 1e-10
    };
    let mut best = 0.0f64;
    for &x in xs.iter().filter(|&&x| !on_break(x)) {
        let base = step.ln_pdf(x);
        for &e in eps.iter().filter(|&&e| !on_break(x + e)) {
            best = best.max((step.ln_pdf(x + e) - base).exp());
        }
    }
    best
}

mod validators {
    use super::*;

    fn check(id: &str, pass: bool, detail: String) -> ConditionCheck {
        ConditionCheck { id: id.to_string(), pass, detail }
    }

    fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
        (0..=n).map(move |j| lo + (hi - lo) * j as f64 / n as f64)
    }

    pub(super) fn run(plan: &DensityFamilyPlan) -> ConditionReport {
        let mut checks = Vec::new();
        let product = plan.config.alphas.infinite_product();
        let r = plan.r();
        let pass_i = product.is_finite() && r.is_none_or(|r| r > product);
        checks.push(check(
            "i",
            pass_i,
            match r {
                Some(r) => format!("prod alpha_i = {product:.12}; r = {r} > prod"),
                None => format!("prod alpha_i = {product:.12}"),
            },
        ));

        let worst_mass = plan
            .bases
            .iter()
            .chain(plan.densities.iter())
            .map(|d| (d.mass() - 1.0).abs())
            .fold(0.0, f64::max);
        checks.push(check(
            "ii",
            worst_mass <= 1e-12,
            format!("max |mass - 1| over rho_i and eta_i = {worst_mass:e}"),
        ));

        let mut iii_ok = true;
        for (idx, d) in plan.bases.iter().enumerate() {
            let step = match d.as_even_step() {
                Some(s) => s,
                None => {
                    iii_ok = false;
                    continue;
                }
            };
            let span = 5.0f64.min(64.0 * step.width);
            let mut prev = f64::INFINITY;
            for x in grid(0.0, span, 4000) {
                let v = d.pdf(x);
                if v > prev || v != d.pdf(-x) {
                    iii_ok = false;
                }
                prev = v;
            }
            if !iii_ok {
                checks.push(check("iii", false, format!("rho_{} not even/non-increasing", idx + 1)));
                break;
            }
        }
        if iii_ok {
            checks.push(check(
                "iii",
                true,
                format!("{} step densities even and non-increasing on [0, inf)", plan.bases.len()),
            ));
        }

        let mut iv_detail = String::new();
        let mut iv_ok = true;
        for i in 1..=plan.len() {
            let step = plan.base(i).as_even_step().expect("step base");
            let m = plan.shift_bound(i);
            // the step pattern is self-similar, so a few dozen factors are representative
            let grid_max = if i <= 24 { step_ratio_grid_max(step, m) } else { f64::NAN };
            let analytic = m <= step.width;
            let ok = analytic && (grid_max.is_nan() || grid_max <= step.alpha * (1.0 + 1e-12));
            if !ok && iv_ok {
                iv_detail = format!("factor {i}: grid max {grid_max} vs alpha {}", step.alpha);
            }
            iv_ok &= ok;
        }
        if iv_ok {
            iv_detail = "M_i <= W_i for all i; grid sup ratio <= alpha_i (i <= 24)".to_string();
        }
        checks.push(check("iv", iv_ok, iv_detail));

        let Some(r) = r else {
            return ConditionReport { checks };
        };

        let v_ok = plan.humps.iter().all(|h| h.a < h.b);
        checks.push(check("v", v_ok, format!("a < b at {} hump sites", plan.humps.len())));

        let vi_ok = plan.humps.iter().all(|h| h.b - h.a < plan.shift_bound(h.index));
        checks.push(check("vi", vi_ok, "b - a < M_{3i-1} at every hump site".to_string()));

        let mut partial = 1.0;
        let mut budget = 1.0;
        let mut vii_ok = true;
        for h in &plan.humps {
            let factor = plan.hump_l2_factor(h);
            let load = 3.0 * r * r * plan.shift_bound(h.index);
            let next = partial * factor;
            budget *= h.beta + plan.alpha(h.index).powi(2);
            vii_ok &= load < h.beta && next >= partial && next <= budget;
            partial = next;
        }
        let analytic = analytic_beta_product(plan);
        vii_ok &= partial <= analytic;
        checks.push(check(
            "vii",
            vii_ok,
            format!("prod (r^2(b-a+2M)+alpha^2) = {partial:.9} <= prod (beta+alpha^2) = {analytic:.9}"),
        ));

        let mut viii_ok = true;
        let mut ix_ok = true;
        let mut x_ok = true;
        let mut x_worst = 0.0f64;
        for h in &plan.humps {
            let pts: Vec<f64> = grid(h.a, h.b, 2000)
                .chain(h.profile.knots.iter().map(|k| k.0))
                .collect();
            let vals: Vec<f64> = pts.iter().map(|&x| h.profile.eval(x)).collect();
            let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
            let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
            viii_ok &= hi / lo >= r * (1.0 - 1e-12);
            let at_b = h.profile.eval(h.b);
            ix_ok &= vals.iter().all(|&v| at_b <= v);
            let base = plan.base(h.index);
            let diff = (h.profile.integral(h.a, h.b) - base.interval_mass(h.a, h.b)).abs();
            x_worst = x_worst.max(diff);
            x_ok &= diff <= 1e-12;
        }
        checks.push(check("viii", viii_ok, format!("sup phi / inf phi >= r = {r}")));
        checks.push(check("ix", ix_ok, "phi(b) <= phi(x) on [a, b]".to_string()));
        checks.push(check("x", x_ok, format!("max |int phi - int rho| on [a, b] = {x_worst:e}")));

        let mut bound_ok = true;
        let mut mass_ok = true;
        for h in &plan.humps {
            if h.step4.is_none() {
                continue;
            }
            let d = plan.density(h.index);
            mass_ok &= (d.mass() - 1.0).abs() <= 1e-12;
            let (_, x0) = h.step4.unwrap();
            let pts = grid(-2.0, x0 + 2.0, 20_000)
                .chain([0.0, x0, h.to_final(h.a), h.to_final(h.b), h.to_final(h.profile.argmax())]);
            for x in pts {
                bound_ok &= d.pdf(x) <= 1.0 + 1e-15;
            }
        }
        checks.push(check("step4-bound", bound_ok, "eta_{3i-1} <= 1 pointwise".to_string()));
        checks.push(check("step4-mass", mass_ok, "renormalized hump densities have mass 1".to_string()));
        ConditionReport { checks }
    }

    /// `prod_i (beta_{3i-1} + alpha_{3i-1}^2)` over all hump counters the rule defines.
    fn analytic_beta_product(plan: &DensityFamilyPlan) -> f64 {
        let hump = plan.config.hump.as_ref().unwrap();
        let alpha_at = |i: usize| plan.config.alphas.alpha(i).ok();
        let mut ln = 0.0;
        let limit = match (&hump.betas, &plan.config.alphas) {
            (BetaRule::Geometric, AlphaRule::Geometric) => 64,
            _ => plan.humps.len(),
        };
        for counter in 1..=limit {
            let (Ok(beta), Some(alpha)) = (hump.betas.beta(counter), alpha_at(3 * counter - 1)) else {
                break;
            };
            ln += (beta + alpha * alpha).ln();
        }
        ln.exp()
    }
}
