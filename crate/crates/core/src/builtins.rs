//! Registry of named example symbols with their reference measures.

use crate::density::{DensityFamilyPlan, FamilyConfig};
use crate::error::{OplimError, Result};
use crate::measure::ProductMeasure;
use crate::symbol::{BandedSpec, DiagonalSpec, ShiftProfile, ShiftSpec, SymbolSpec};

/// Factors built for the nonlinear builtins.
pub const PLAN_FACTORS: usize = 48;

pub const IDS: [&str; 7] =
    ["identity", "example-5.2", "diagonal", "exp-inv-square", "triangular", "hump", "geometric-tail"];

#[derive(Debug, Clone)]
pub struct Problem {
    pub id: &'static str,
    pub description: &'static str,
    pub symbol: SymbolSpec,
    pub measure: ProductMeasure,
    pub plan: Option<DensityFamilyPlan>,
}

impl Problem {
    pub fn row_finite(&self) -> bool {
        self.symbol.row_finite_horizon(1).is_ok()
    }
}

fn shift_problem(id: &'static str, description: &'static str, config: FamilyConfig) -> Result<Problem> {
    let plan = DensityFamilyPlan::build(&config)?;
    let symbol = SymbolSpec::TriangularShift(ShiftSpec::new(plan.shift_bounds().to_vec(), ShiftProfile::RationalRamp)?);
    Ok(Problem { id, description, symbol, measure: ProductMeasure::from_plan(&plan), plan: Some(plan) })
}

fn linear(id: &'static str, description: &'static str, symbol: SymbolSpec) -> Problem {
    Problem { id, description, symbol, measure: ProductMeasure::gaussian(), plan: None }
}

pub fn lookup(id: &str) -> Result<Problem> {
    Ok(match id {
        "identity" => linear("identity", "identity symbol on the standard gaussian product", SymbolSpec::identity()),
        "example-5.2" => linear(
            "example-5.2",
            "upper bidiagonal, unit diagonal, superdiagonal 2^-(2i+1); det 1, norm in (1, sqrt 2)",
            SymbolSpec::Banded(BandedSpec::Example52),
        ),
        "diagonal" | "diagonal-exp-inv-square" => linear(
            "diagonal",
            "diagonal a_i = exp(-1/i^2); bounded with squared norm exp(pi^2/6)",
            SymbolSpec::Diagonal(DiagonalSpec::ExpInvSquare),
        ),
        "exp-inv-square" => linear(
            "exp-inv-square",
            "diagonal exp(-1/i^2) with contraction superdiagonal (1 - exp(-1/(i+1)^2))/2",
            SymbolSpec::Banded(BandedSpec::ExpInvSquare),
        ),
        "geometric-tail" => linear(
            "geometric-tail",
            "upper triangular a_ij = 2^-(j-i)-1; not row-finite",
            SymbolSpec::Banded(BandedSpec::GeometricTail),
        ),
        "triangular" => shift_problem(
            "triangular",
            "triangular shift x_i + p_i(x_(i-1)) over even-step densities; h bounded by prod alpha_i",
            FamilyConfig::steps(PLAN_FACTORS),
        )?,
        "hump" => shift_problem(
            "hump",
            "triangular shift over hump-modified step densities; uniformly L2-bounded, unbounded ess sup",
            FamilyConfig::appendix(PLAN_FACTORS),
        )?,
        other => {
            return Err(OplimError::UnknownId { id: other.to_string(), known: IDS.join(", ") });
        }
    })
}

pub fn all() -> Result<Vec<Problem>> {
    IDS.iter().map(|id| lookup(id)).collect()
}
