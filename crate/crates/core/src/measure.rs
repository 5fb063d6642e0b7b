//! Product measures, cylinder sets and a seeded Monte Carlo integrator.
//!
//! Samples are generated in fixed-size batches; batch `b` draws from
//! `ChaCha8Rng::seed_from_u64(seed)` on stream `b`, and per-batch statistics are
//! merged pairwise in batch order. Results therefore depend only on the seed and
//! the sample count, never on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{DensityFamilyPlan, DensityModel, FamilyConfig};
use crate::error::{OplimError, Result};

pub const DEFAULT_SAMPLES: u64 = 1_000_000;
pub const DEFAULT_SEED: u64 = 0xC0FFEE;
pub const WORKERS_ENV: &str = "OPLIM_WORKERS";
const BATCH: u64 = 1 << 14;

/// `mu_n = eta_1 (x) ... (x) eta_n`, optionally continued by a repeating tail factor.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductMeasure {
    factors: Vec<DensityModel>,
    tail: Option<DensityModel>,
}

impl ProductMeasure {
    pub fn new(factors: Vec<DensityModel>, tail: Option<DensityModel>) -> Self {
        ProductMeasure { factors, tail }
    }

    /// The infinite standard gaussian product.
    pub fn gaussian() -> Self {
        ProductMeasure { factors: Vec::new(), tail: Some(DensityModel::Gaussian) }
    }

    pub fn from_plan(plan: &DensityFamilyPlan) -> Self {
        ProductMeasure { factors: plan.densities().to_vec(), tail: None }
    }

    /// Number of factors defined; `None` when the tail repeats forever.
    pub fn available(&self) -> Option<usize> {
        match self.tail {
            Some(_) => None,
            None => Some(self.factors.len()),
        }
    }

    /// Factor `i`, 1-based.
    pub fn factor(&self, i: usize) -> Result<&DensityModel> {
        self.factors.get(i - 1).or(self.tail.as_ref()).ok_or(OplimError::DimensionExceeded {
            available: self.factors.len(),
            requested: i,
        })
    }

    /// Factors `1..=n`.
    pub fn factors(&self, n: usize) -> Result<Vec<&DensityModel>> {
        (1..=n).map(|i| self.factor(i)).collect()
    }

    pub fn is_gaussian(&self, n: usize) -> bool {
        self.factors(n).is_ok_and(|f| f.iter().all(|d| **d == DensityModel::Gaussian))
    }

    /// `sum_i ln eta_i(x_i)`.
    pub fn ln_density(&self, x: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            s += self.factor(i + 1)?.ln_pdf(xi);
        }
        Ok(s)
    }
}

/// Serializable description of a product measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeasureSpec {
    Gaussian,
    Factors {
        factors: Vec<DensityModel>,
        #[serde(default)]
        tail: Option<DensityModel>,
    },
    StepFamily {
        config: FamilyConfig,
    },
}

impl MeasureSpec {
    pub fn build(&self) -> Result<ProductMeasure> {
        match self {
            MeasureSpec::Gaussian => Ok(ProductMeasure::gaussian()),
            MeasureSpec::Factors { factors, tail } => {
                for d in factors.iter().chain(tail.iter()) {
                    d.validate()?;
                }
                Ok(ProductMeasure::new(factors.clone(), tail.clone()))
            }
            MeasureSpec::StepFamily { config } => {
                Ok(ProductMeasure::from_plan(&DensityFamilyPlan::build(config)?))
            }
        }
    }
}

/// Monte Carlo (or exact) value of an integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
    pub seed: u64,
    pub exact: bool,
}

impl McEstimate {
    pub fn exact(value: f64, seed: u64) -> Self {
        McEstimate { value, stderr: 0.0, n: 0, seed, exact: true }
    }

    /// `|self - other| <= k * sqrt(se1^2 + se2^2)`.
    pub fn agrees_with(&self, other: &McEstimate, k: f64) -> bool {
        (self.value - other.value).abs() <= k * self.stderr.hypot(other.stderr)
    }

    /// `|self - target| <= k * se`.
    pub fn agrees_with_value(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Stats {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(a: Stats, b: Stats) -> Stats {
        if a.count == 0 {
            return b;
        }
        if b.count == 0 {
            return a;
        }
        let count = a.count + b.count;
        let d = b.mean - a.mean;
        let mean = if d == 0.0 { a.mean } else { a.mean + d * b.count as f64 / count as f64 };
        let m2 = a.m2 + b.m2 + d * d * (a.count as f64 * b.count as f64 / count as f64);
        Stats { count, mean, m2 }
    }

    fn stderr(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        (self.m2 / (self.count - 1) as f64).sqrt() / (self.count as f64).sqrt()
    }
}

fn merge_pairwise(mut v: Vec<Vec<Stats>>) -> Vec<Stats> {
    while v.len() > 1 {
        let mut next = Vec::with_capacity(v.len().div_ceil(2));
        let mut it = v.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a.into_iter().zip(b).map(|(x, y)| Stats::merge(x, y)).collect()),
                None => next.push(a),
            }
        }
        v = next;
    }
    v.pop().unwrap_or_default()
}

/// Worker count from `OPLIM_WORKERS`, else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Sample budget, seed and parallelism for Monte Carlo integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarlo {
    pub samples: u64,
    pub seed: u64,
    pub workers: usize,
    /// Non-finite integrand values tolerated (and dropped) before failing.
    pub tolerated_nonfinite: u64,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        MonteCarlo { samples: DEFAULT_SAMPLES, seed: DEFAULT_SEED, workers: default_workers(), tolerated_nonfinite: 0 }
    }
}

impl MonteCarlo {
    pub fn new(samples: u64, seed: u64) -> Self {
        MonteCarlo { samples, seed, ..Default::default() }
    }

    pub fn with_workers(self, workers: usize) -> Self {
        MonteCarlo { workers: workers.max(1), ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        MonteCarlo { seed, ..self }
    }

    /// Same settings with the seed moved to an independent stream family.
    pub fn derived(self, salt: u64) -> Self {
        let seed = self.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
        MonteCarlo { seed, ..self }
    }

    /// `int f d mu_dims` for a scalar integrand reading the first `dims` coordinates.
    pub fn integrate<F>(&self, measure: &ProductMeasure, dims: usize, f: F) -> Result<McEstimate>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let mut out = self.integrate_many(measure, dims, 1, |x, o| o[0] = f(x))?;
        Ok(out.pop().unwrap())
    }

    /// Several integrands evaluated on common samples; `f` fills `outputs` values.
    pub fn integrate_many<F>(
        &self,
        measure: &ProductMeasure,
        dims: usize,
        outputs: usize,
        f: F,
    ) -> Result<Vec<McEstimate>>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        if self.samples == 0 {
            return Err(OplimError::invalid("sample count must be positive"));
        }
        let factors = measure.factors(dims)?;
        let batches = self.samples.div_ceil(BATCH);
        let run_batch = |b: u64| -> (Vec<Stats>, u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(b);
            let count = BATCH.min(self.samples - b * BATCH);
            let mut x = vec![0.0; dims];
            let mut vals = vec![0.0; outputs];
            let mut stats = vec![Stats::default(); outputs];
            let mut bad = 0;
            for _ in 0..count {
                for (xi, d) in x.iter_mut().zip(&factors) {
                    *xi = d.sample(&mut rng);
                }
                f(&x, &mut vals);
                if vals.iter().all(|v| v.is_finite()) {
                    for (s, &v) in stats.iter_mut().zip(&vals) {
                        s.push(v);
                    }
                } else {
                    bad += 1;
                }
            }
            (stats, bad)
        };
        let parts: Vec<(Vec<Stats>, u64)> = if self.workers <= 1 || batches == 1 {
            (0..batches).map(run_batch).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.workers)
                .build()
                .map_err(|e| OplimError::invalid(format!("thread pool: {e}")))?;
            pool.install(|| (0..batches).into_par_iter().map(run_batch).collect())
        };
        let bad: u64 = parts.iter().map(|p| p.1).sum();
        if bad > self.tolerated_nonfinite {
            return Err(OplimError::IntegrandError { count: bad, tolerated: self.tolerated_nonfinite });
        }
        let merged = merge_pairwise(parts.into_iter().map(|p| p.0).collect());
        Ok(merged
            .into_iter()
            .map(|s| McEstimate { value: s.mean, stderr: s.stderr(), n: s.count, seed: self.seed, exact: false })
            .collect())
    }
}

/// Half-open box `[lo_1, hi_1) x ... x [lo_k, hi_k)`; infinite bounds allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(OplimError::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        if lo.iter().chain(&hi).any(|v| v.is_nan()) {
            return Err(OplimError::invalid("box bounds must not be NaN"));
        }
        Ok(BoxRegion { lo, hi })
    }

    pub fn full(k: usize) -> Self {
        BoxRegion { lo: vec![f64::NEG_INFINITY; k], hi: vec![f64::INFINITY; k] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.iter().zip(&self.hi).any(|(l, h)| h <= l)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.lo.iter().zip(&self.hi).zip(x).all(|((l, h), v)| *l <= *v && *v < *h)
    }

    fn intersects(&self, other: &BoxRegion) -> bool {
        (0..self.dim()).all(|i| self.lo[i].max(other.lo[i]) < self.hi[i].min(other.hi[i]))
    }

    /// `self \ other` as disjoint boxes.
    fn minus(&self, other: &BoxRegion) -> Vec<BoxRegion> {
        if !self.intersects(other) {
            return vec![self.clone()];
        }
        let mut pieces = Vec::new();
        let mut rest = self.clone();
        for i in 0..self.dim() {
            if rest.lo[i] < other.lo[i] {
                let mut p = rest.clone();
                p.hi[i] = other.lo[i];
                pieces.push(p);
                rest.lo[i] = other.lo[i];
            }
            if other.hi[i] < rest.hi[i] {
                let mut p = rest.clone();
                p.lo[i] = other.hi[i];
                pieces.push(p);
                rest.hi[i] = other.hi[i];
            }
        }
        pieces
    }

    /// Exact product mass under the first `dim` factors.
    pub fn mass(&self, measure: &ProductMeasure) -> Result<f64> {
        let mut p = 1.0;
        for i in 0..self.dim() {
            p *= measure.factor(i + 1)?.interval_mass(self.lo[i], self.hi[i]);
        }
        Ok(p)
    }
}

/// `(delta^k)^{-1}(sigma)` for `sigma` a finite union of boxes in `R^k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CylinderSet {
    k: usize,
    boxes: Vec<BoxRegion>,
}

impl CylinderSet {
    /// Overlapping boxes are split so that the stored boxes are disjoint.
    pub fn from_boxes(k: usize, boxes: Vec<BoxRegion>) -> Result<Self> {
        let mut disjoint: Vec<BoxRegion> = Vec::new();
        for b in boxes {
            if b.dim() != k {
                return Err(OplimError::DimensionMismatch { expected: k, got: b.dim() });
            }
            let mut pieces = vec![b];
            for d in &disjoint {
                pieces = pieces.into_iter().flat_map(|p| p.minus(d)).collect();
            }
            disjoint.extend(pieces.into_iter().filter(|p| !p.is_empty()));
        }
        Ok(CylinderSet { k, boxes: disjoint })
    }

    pub fn single(b: BoxRegion) -> Self {
        CylinderSet { k: b.dim(), boxes: vec![b] }
    }

    pub fn full(k: usize) -> Self {
        CylinderSet { k, boxes: vec![BoxRegion::full(k)] }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn boxes(&self) -> &[BoxRegion] {
        &self.boxes
    }

    pub fn is_full(&self) -> bool {
        self.boxes.iter().any(|b| b.lo.iter().chain(&b.hi).all(|v| v.is_infinite()) && !b.is_empty())
    }

    /// Reads only `x[..k]`.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.boxes.iter().any(|b| b.contains(&x[..self.k]))
    }

    pub fn exact_mass(&self, measure: &ProductMeasure) -> Result<f64> {
        self.boxes.iter().map(|b| b.mass(measure)).sum()
    }
}

/// Ten deterministic boxes in `R^k` with corners at the deciles 0.1..0.9 of the factors.
pub fn quantile_box_battery(measure: &ProductMeasure, k: usize) -> Result<Vec<CylinderSet>> {
    const PAIRS: [(usize, usize); 10] =
        [(0, 8), (0, 4), (4, 8), (1, 5), (2, 6), (3, 7), (0, 2), (6, 8), (2, 4), (1, 7)];
    let level = |idx: usize| 0.1 * (idx + 1) as f64;
    (0..10)
        .map(|j| {
            let mut lo = Vec::with_capacity(k);
            let mut hi = Vec::with_capacity(k);
            for i in 0..k {
                let d = measure.factor(i + 1)?;
                let (a, b) = PAIRS[(j + i) % 10];
                lo.push(d.quantile(level(a)));
                hi.push(d.quantile(level(b)));
            }
            Ok(CylinderSet::single(BoxRegion::new(lo, hi)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CylinderEstimate {
    pub mc: McEstimate,
    pub exact: Option<f64>,
}

/// `mu((delta^k)^{-1}(sigma))` by sampling the first `k` coordinates, plus the
/// closed-form value from the factor CDFs.
pub fn cylinder_measure(set: &CylinderSet, measure: &ProductMeasure, mc: &MonteCarlo) -> Result<CylinderEstimate> {
    let exact = Some(set.exact_mass(measure)?);
    let est = if set.is_full() {
        McEstimate::exact(1.0, mc.seed)
    } else {
        mc.integrate(measure, set.k(), |x| if set.contains(x) { 1.0 } else { 0.0 })?
    };
    Ok(CylinderEstimate { mc: est, exact })
}

/// `mu(S_1 sym-diff S_2)` for sets given as predicates on the first `dims` coordinates.
pub fn symdiff_measure<P, Q>(s1: P, s2: Q, measure: &ProductMeasure, dims: usize, mc: &MonteCarlo) -> Result<McEstimate>
where
    P: Fn(&[f64]) -> bool + Sync,
    Q: Fn(&[f64]) -> bool + Sync,
{
    mc.integrate(measure, dims, |x| if s1(x) != s2(x) { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsometryRow {
    pub function: String,
    /// `int |f o delta^k|^2 d mu`, sampled on `k + extra` coordinates.
    pub lifted: McEstimate,
    /// `int |f|^2 d mu_k`.
    pub base: McEstimate,
    pub oracle: Option<f64>,
    pub discrepancy: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsometryReport {
    pub k: usize,
    pub rows: Vec<IsometryRow>,
}

impl IsometryReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// `E[x^2; |x| <= c]` for the standard gaussian.
pub fn gaussian_truncated_second_moment(c: f64) -> f64 {
    let d = DensityModel::Gaussian;
    (d.cdf(c) - d.cdf(-c)) - 2.0 * c * d.pdf(c)
}

/// Checks `int |f o delta^k|^2 d mu = int |f|^2 d mu_k` for a fixed battery of `f`.
pub fn marginal_isometry_check(measure: &ProductMeasure, k: usize, mc: &MonteCarlo) -> Result<IsometryReport> {
    if k == 0 {
        return Err(OplimError::invalid("isometry check needs k >= 1"));
    }
    let extra = match measure.available() {
        Some(a) if a < k => return Err(OplimError::DimensionExceeded { available: a, requested: k }),
        Some(a) => (a - k).min(3),
        None => 3,
    };
    type Sq = Box<dyn Fn(&[f64]) -> f64 + Sync>;
    let orthant = CylinderSet::single(BoxRegion::new(vec![0.0; k], vec![f64::INFINITY; k])?);
    let orthant_mass = orthant.exact_mass(measure)?;
    let orthant2 = orthant.clone();
    let first_gauss = *measure.factor(1)? == DensityModel::Gaussian;
    let battery: Vec<(String, Sq, Option<f64>)> = vec![
        ("indicator of R^k".into(), Box::new(|_| 1.0), Some(1.0)),
        (
            "indicator of [0, inf)^k".into(),
            Box::new(move |x| if orthant2.contains(x) { 1.0 } else { 0.0 }),
            Some(orthant_mass),
        ),
        (
            "x_1 restricted to [-10, 10]".into(),
            Box::new(|x| if x[0].abs() <= 10.0 { x[0] * x[0] } else { 0.0 }),
            first_gauss.then(|| gaussian_truncated_second_moment(10.0)),
        ),
        (
            "(1 + x_1 x_k) restricted to [-1, 1]^k".into(),
            Box::new(move |x| {
                if x[..k].iter().all(|v| v.abs() <= 1.0) {
                    let v = 1.0 + x[0] * x[k - 1];
                    v * v
                } else {
                    0.0
                }
            }),
            None,
        ),
    ];
    let lifted_mc = mc.derived(1);
    let base_mc = mc.derived(2);
    let mut rows = Vec::new();
    for (name, f, oracle) in battery {
        let lifted = lifted_mc.integrate(measure, k + extra, |x| f(&x[..k]))?;
        let base = base_mc.integrate(measure, k, |x| f(x))?;
        let discrepancy = (lifted.value - base.value).abs();
        let mut pass = discrepancy <= 3.0 * lifted.stderr.hypot(base.stderr);
        if let Some(o) = oracle {
            pass &= lifted.agrees_with_value(o, 3.0) || (lifted.value - o).abs() <= 1e-12;
        }
        rows.push(IsometryRow { function: name, lifted, base, oracle, discrepancy, pass });
    }
    Ok(IsometryReport { k, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::build_step_density;

    fn mc(samples: u64, seed: u64) -> MonteCarlo {
        MonteCarlo::new(samples, seed).with_workers(1)
    }

    #[test]
    fn constant_integrand_is_exact() {
        let m = ProductMeasure::gaussian();
        let e = mc(100_000, 1).integrate(&m, 3, |_| 1.0).unwrap();
        assert_eq!(e.value, 1.0);
        assert_eq!(e.stderr, 0.0);
        assert_eq!(e.n, 100_000);
    }

    #[test]
    fn gaussian_second_moment() {
        let m = ProductMeasure::gaussian();
        let e = mc(1_000_000, DEFAULT_SEED).integrate(&m, 2, |x| x[0] * x[0]).unwrap();
        assert!(e.agrees_with_value(1.0, 3.0), "{e:?}");
    }

    #[test]
    fn step_factor_first_step_mass() {
        let m = ProductMeasure::new(vec![build_step_density(1.5).unwrap()], Some(DensityModel::Gaussian));
        let e = mc(1_000_000, 5).integrate(&m, 2, |x| if (0.0..1.0 / 6.0).contains(&x[0]) { 1.0 } else { 0.0 }).unwrap();
        assert!(e.agrees_with_value(1.0 / 6.0, 3.0), "{e:?}");
    }

    #[test]
    fn results_do_not_depend_on_workers() {
        let m = ProductMeasure::gaussian();
        let f = |x: &[f64]| (x[0] + x[1]).exp().min(50.0);
        let a = mc(200_000, 9).integrate(&m, 2, f).unwrap();
        let b = mc(200_000, 9).with_workers(3).integrate(&m, 2, f).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn nonfinite_values_are_reported() {
        let m = ProductMeasure::gaussian();
        let err = mc(1000, 1).integrate(&m, 1, |x| if x[0] > 2.0 { f64::NAN } else { 0.0 }).unwrap_err();
        assert!(matches!(err, OplimError::IntegrandError { .. }));
        let tolerant = MonteCarlo { tolerated_nonfinite: 1000, ..mc(1000, 1) };
        assert!(tolerant.integrate(&m, 1, |x| if x[0] > 2.0 { f64::NAN } else { 0.0 }).is_ok());
    }

    #[test]
    fn cylinder_full_space_and_first_step() {
        let m = ProductMeasure::new(vec![build_step_density(1.5).unwrap()], None);
        let full = cylinder_measure(&CylinderSet::full(1), &m, &mc(1000, 1)).unwrap();
        assert_eq!(full.mc.value, 1.0);
        assert_eq!(full.exact, Some(1.0));
        let s = CylinderSet::single(BoxRegion::new(vec![0.0], vec![1.0 / 6.0]).unwrap());
        let est = cylinder_measure(&s, &m, &mc(1_000_000, 2)).unwrap();
        assert!((est.exact.unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!(est.mc.agrees_with_value(1.0 / 6.0, 3.0));
    }

    #[test]
    fn cylinder_gaussian_orthant() {
        let m = ProductMeasure::gaussian();
        let s = CylinderSet::single(BoxRegion::new(vec![0.0; 2], vec![f64::INFINITY; 2]).unwrap());
        let est = cylinder_measure(&s, &m, &mc(1_000_000, 4)).unwrap();
        assert!((est.exact.unwrap() - 0.25).abs() < 1e-15);
        assert!(est.mc.agrees_with_value(0.25, 3.0));
    }

    #[test]
    fn overlapping_boxes_are_disjointified() {
        let a = BoxRegion::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        let b = BoxRegion::new(vec![1.0, 1.0], vec![3.0, 3.0]).unwrap();
        let s = CylinderSet::from_boxes(2, vec![a, b]).unwrap();
        for (i, p) in s.boxes().iter().enumerate() {
            for q in &s.boxes()[i + 1..] {
                assert!(!p.intersects(q));
            }
        }
        // Lebesgue-area oracle via a uniform product of [0, 4) steps is awkward; count a grid instead
        let mut hits = 0;
        for i in 0..400 {
            for j in 0..400 {
                let x = [i as f64 / 100.0 + 0.005, j as f64 / 100.0 + 0.005];
                let inside: usize = s.boxes().iter().filter(|b| b.contains(&x)).count();
                assert!(inside <= 1);
                hits += inside;
            }
        }
        assert_eq!(hits, 7 * 10_000);
    }

    #[test]
    fn symdiff_cases() {
        let m = ProductMeasure::new(vec![build_step_density(1.5).unwrap()], None);
        let same = symdiff_measure(|x| x[0] > 0.1, |x| x[0] > 0.1, &m, 1, &mc(10_000, 1)).unwrap();
        assert_eq!(same.value, 0.0);
        let d = m.factor(1).unwrap();
        let (p, q) = (d.interval_mass(0.0, 0.1), d.interval_mass(0.5, 1.0));
        let est = symdiff_measure(
            |x| (0.0..0.1).contains(&x[0]),
            |x| (0.5..1.0).contains(&x[0]),
            &m,
            1,
            &mc(1_000_000, 3),
        )
        .unwrap();
        assert!(est.agrees_with_value(p + q, 3.0), "{est:?} vs {}", p + q);
    }

    #[test]
    fn isometry_gaussian_k2() {
        let m = ProductMeasure::gaussian();
        let r = marginal_isometry_check(&m, 2, &mc(1_000_000, 7)).unwrap();
        assert!(r.all_pass(), "{r:?}");
        assert_eq!(r.rows[0].lifted.value, 1.0);
        assert_eq!(r.rows[0].base.value, 1.0);
        assert!((r.rows[1].oracle.unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn truncated_second_moment_oracle() {
        // trapezoid quadrature oracle
        let n = 200_000;
        let h = 20.0 / n as f64;
        let g = |x: f64| x * x * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let q: f64 = (0..=n).map(|i| {
            let x = -10.0 + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * g(x)
        }).sum::<f64>() * h;
        assert!((gaussian_truncated_second_moment(10.0) - q).abs() < 1e-10);
    }

    #[test]
    fn marginal_ks_first_coordinate() {
        let m = ProductMeasure::new(vec![build_step_density(1.5).unwrap(); 3], None);
        let cfg = mc(1_000_000, 13);
        // sample the first coordinate through the product sampler
        let d = m.factor(1).unwrap().clone();
        let mut xs = Vec::with_capacity(1_000_000);
        let est = cfg.integrate_many(&m, 3, 1, |x, o| o[0] = x[0]).unwrap();
        assert_eq!(est[0].n, 1_000_000);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for b in 0..cfg.samples.div_ceil(BATCH) {
            rng.set_stream(b);
            rng.set_word_pos(0);
            let count = BATCH.min(cfg.samples - b * BATCH);
            for _ in 0..count {
                xs.push(d.sample(&mut rng));
                for j in 2..=3 {
                    m.factor(j).unwrap().sample(&mut rng);
                }
            }
        }
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs.iter().enumerate().map(|(j, &x)| {
            let f = d.cdf(x);
            (f - j as f64 / n).abs().max((f - (j + 1) as f64 / n).abs())
        }).fold(0.0, f64::max);
        assert!(ks <= 0.002, "{ks}");
    }

    #[test]
    fn battery_is_deterministic_and_nonempty() {
        let m = ProductMeasure::gaussian();
        let a = quantile_box_battery(&m, 3).unwrap();
        let b = quantile_box_battery(&m, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        for s in &a {
            assert!(s.exact_mass(&m).unwrap() > 0.0);
        }
    }

    #[test]
    fn measure_spec_round_trip() {
        let spec = MeasureSpec::Factors { factors: vec![build_step_density(1.5).unwrap()], tail: Some(DensityModel::Gaussian) };
        let s = serde_json::to_string(&spec).unwrap();
        let back: MeasureSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.build().unwrap().factor(5).unwrap(), &DensityModel::Gaussian);
    }
}
