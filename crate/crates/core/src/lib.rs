//! Numerical analysis of composition operators `f -> f o A` on L² spaces over
//! infinite product measures, through finite-dimensional truncations `A_n`.
//!
//! * [`density`]: one-dimensional factor densities and the hump construction.
//! * [`measure`]: product measures, cylinder sets, seeded Monte Carlo.
//! * [`symbol`]: transformations of the product space and their truncations.
//! * [`rn`]: Radon–Nikodym derivatives `h^{A_n}`, essential suprema, moments.
//! * [`criteria`]: boundedness / dense-definiteness certificates and demos.
//! * [`cli`]: the `oplim` command-line front end.

pub mod builtins;
pub mod cli;
pub mod criteria;
pub mod density;
pub mod error;
pub mod linalg;
pub mod measure;
pub mod report;
pub mod rn;
pub mod symbol;

pub use error::{OplimError, Result};
