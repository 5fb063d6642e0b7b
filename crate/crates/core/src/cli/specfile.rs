//! Symbol-spec file format, schema `oplim-symbol/1`.
//!
//! ```json
//! {
//!   "schema": "oplim-symbol/1",
//!   "variant": "banded-linear",
//!   "band": { "rows": [ { "j": 1, "cols": [ { "k": 1, "v": 1.0 }, { "k": 2, "v": 0.125 } ] },
//!                       { "j": 2, "cols": [ { "k": 2, "v": 1.0 } ] } ] }
//! }
//! ```
//!
//! `variant` is one of `banded-linear` (with `band`), `diagonal` (with `diag`)
//! or `triangular-shift` (with `shifts: [{ "M": .., "profile": .. }]`, entry
//! `i` giving `M_i`; `M_1` is ignored). An optional `measure` selects the
//! reference product measure and defaults to the standard gaussian.

use serde::{Deserialize, Serialize};

use crate::density::DensityFamilyPlan;
use crate::error::{OplimError, Result};
use crate::measure::{MeasureSpec, ProductMeasure};
use crate::symbol::{BandedSpec, DiagonalSpec, ShiftProfile, ShiftSpec, SymbolSpec};

pub const SYMBOL_SCHEMA: &str = "oplim-symbol/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    BandedLinear,
    Diagonal,
    TriangularShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entry {
    pub k: usize,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Row {
    pub j: usize,
    pub cols: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shift {
    #[serde(rename = "M")]
    pub m: f64,
    pub profile: ShiftProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub schema: String,
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<Band>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diag: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shifts: Option<Vec<Shift>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureSpec>,
}

/// A parsed and validated spec file.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub symbol: SymbolSpec,
    pub measure: ProductMeasure,
    pub description: String,
}

fn schema_err(location: impl Into<String>, message: impl Into<String>) -> OplimError {
    OplimError::Schema { location: location.into(), message: message.into() }
}

fn required<'a, T>(v: &'a Option<T>, field: &str, variant: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| schema_err(field, format!("required for variant {variant}")))
}

impl SpecFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| schema_err(format!("line {} column {}", e.line(), e.column()), e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("spec files are serializable");
        s.push('\n');
        s
    }

    pub fn from_plan(plan: &DensityFamilyPlan, description: impl Into<String>) -> Self {
        SpecFile {
            schema: SYMBOL_SCHEMA.into(),
            variant: Variant::TriangularShift,
            description: Some(description.into()),
            band: None,
            diag: None,
            shifts: Some(
                plan.shift_bounds().iter().map(|&m| Shift { m, profile: ShiftProfile::RationalRamp }).collect(),
            ),
            measure: Some(MeasureSpec::Factors { factors: plan.densities().to_vec(), tail: None }),
        }
    }

    pub fn load(&self) -> Result<Loaded> {
        if self.schema != SYMBOL_SCHEMA {
            return Err(schema_err("schema", format!("expected \"{SYMBOL_SCHEMA}\", got \"{}\"", self.schema)));
        }
        let symbol = match self.variant {
            Variant::BandedLinear => SymbolSpec::Banded(self.band_rows()?),
            Variant::Diagonal => {
                let d = required(&self.diag, "diag", "diagonal")?;
                if d.is_empty() {
                    return Err(schema_err("diag", "must be non-empty"));
                }
                if let Some(i) = d.iter().position(|v| !v.is_finite()) {
                    return Err(schema_err(format!("diag[{i}]"), "must be finite"));
                }
                SymbolSpec::Diagonal(DiagonalSpec::Values(d.clone()))
            }
            Variant::TriangularShift => {
                let s = required(&self.shifts, "shifts", "triangular-shift")?;
                if s.is_empty() {
                    return Err(schema_err("shifts", "must be non-empty"));
                }
                let profile = s[0].profile;
                if let Some(i) = s.iter().position(|e| e.profile != profile) {
                    return Err(schema_err(format!("shifts[{i}].profile"), "all entries must share one profile"));
                }
                if let Some(i) = s.iter().position(|e| !(e.m.is_finite() && e.m >= 0.0)) {
                    return Err(schema_err(format!("shifts[{i}].M"), "must be finite and >= 0"));
                }
                SymbolSpec::TriangularShift(ShiftSpec::new(s.iter().map(|e| e.m).collect(), profile)?)
            }
        };
        let measure = match &self.measure {
            None => ProductMeasure::gaussian(),
            Some(m) => {
                if let MeasureSpec::Factors { factors, .. } = m {
                    for (i, d) in factors.iter().enumerate() {
                        d.validate().map_err(|e| schema_err(format!("measure.factors[{i}]"), e.to_string()))?;
                    }
                }
                m.build().map_err(|e| schema_err("measure", e.to_string()))?
            }
        };
        let description = self.description.clone().unwrap_or_else(|| format!("{:?} symbol from spec file", self.variant));
        Ok(Loaded { symbol, measure, description })
    }

    fn band_rows(&self) -> Result<BandedSpec> {
        let band = required(&self.band, "band", "banded-linear")?;
        let n = band.rows.len();
        if n == 0 {
            return Err(schema_err("band.rows", "must be non-empty"));
        }
        let mut rows: Vec<Option<Vec<(usize, f64)>>> = vec![None; n];
        for (ri, row) in band.rows.iter().enumerate() {
            let loc = format!("band.rows[{ri}]");
            if row.j == 0 || row.j > n {
                return Err(schema_err(format!("{loc}.j"), format!("row index must lie in 1..={n}")));
            }
            if rows[row.j - 1].is_some() {
                return Err(schema_err(format!("{loc}.j"), format!("duplicate row {}", row.j)));
            }
            let mut cols = Vec::with_capacity(row.cols.len());
            for (ci, e) in row.cols.iter().enumerate() {
                if e.k == 0 {
                    return Err(schema_err(format!("{loc}.cols[{ci}].k"), "column indices are 1-based"));
                }
                if !e.v.is_finite() {
                    return Err(schema_err(format!("{loc}.cols[{ci}].v"), "must be finite"));
                }
                if cols.iter().any(|&(k, _)| k == e.k) {
                    return Err(schema_err(format!("{loc}.cols[{ci}].k"), format!("duplicate column {}", e.k)));
                }
                cols.push((e.k, e.v));
            }
            cols.sort_by_key(|c| c.0);
            rows[row.j - 1] = Some(cols);
        }
        Ok(BandedSpec::Explicit { rows: rows.into_iter().map(Option::unwrap).collect() })
    }
}

pub fn load_path(path: &std::path::Path) -> Result<Loaded> {
    let text = std::fs::read_to_string(path)?;
    SpecFile::parse(&text)?.load()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::FamilyConfig;

    const EX52: &str = r#"{
        "schema": "oplim-symbol/1",
        "variant": "banded-linear",
        "band": { "rows": [ { "j": 2, "cols": [ { "k": 2, "v": 1.0 } ] },
                            { "j": 1, "cols": [ { "k": 2, "v": 0.125 }, { "k": 1, "v": 1.0 } ] } ] }
    }"#;

    #[test]
    fn banded_matches_builtin() {
        let l = SpecFile::parse(EX52).unwrap().load().unwrap();
        let t = l.symbol.truncate(2).unwrap();
        let b = SymbolSpec::Banded(BandedSpec::Example52).truncate(2).unwrap();
        assert_eq!(t.matrix().unwrap().to_dense(), b.matrix().unwrap().to_dense());
        assert!(l.measure.is_gaussian(2));
    }

    #[test]
    fn schema_errors_carry_location() {
        let e = SpecFile::parse("{\n  \"schema\": \"oplim-symbol/1\",\n  \"variant\": \"banded\"\n}").unwrap_err();
        assert!(matches!(e, OplimError::Schema { ref location, .. } if location.starts_with("line 3")), "{e}");
        let bad = EX52.replace("\"j\": 2", "\"j\": 5");
        let e = SpecFile::parse(&bad).unwrap().load().unwrap_err();
        assert!(matches!(e, OplimError::Schema { ref location, .. } if location == "band.rows[0].j"), "{e}");
        let e = SpecFile::parse(r#"{"schema":"oplim-symbol/1","variant":"diagonal"}"#).unwrap().load().unwrap_err();
        assert!(matches!(e, OplimError::Schema { ref location, .. } if location == "diag"));
        let e = SpecFile::parse(r#"{"schema":"x","variant":"diagonal","diag":[1]}"#).unwrap().load().unwrap_err();
        assert!(matches!(e, OplimError::Schema { ref location, .. } if location == "schema"));
    }

    #[test]
    fn plan_round_trip() {
        let plan = DensityFamilyPlan::build(&FamilyConfig::appendix(8)).unwrap();
        let f = SpecFile::from_plan(&plan, "appendix plan");
        let back = SpecFile::parse(&f.to_json()).unwrap();
        assert_eq!(back, f);
        let l = back.load().unwrap();
        assert_eq!(l.measure, ProductMeasure::from_plan(&plan));
        match l.symbol {
            SymbolSpec::TriangularShift(s) => assert_eq!(s.bounds, plan.shift_bounds()),
            _ => panic!(),
        }
    }
}
