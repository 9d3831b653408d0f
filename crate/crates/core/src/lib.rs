//! Analysis of smooth interval maps with an eventual negative Schwarzian
//! derivative: evaluation, certification, orbit census, invariant measures
//! and a synthetic neuron return-map family.

pub mod error;
pub mod expr;
pub mod interval;
pub mod jet;
pub mod orbits;
pub mod schwarzian;
pub mod certify;
pub mod fixtures;
pub mod measure;
pub mod neuro;

pub use error::{Error, EvalError, Result};
pub use expr::{parse_expr, Expr, MapExpr};
pub use interval::IntervalBox;
pub use jet::{Jet3, Scalar};
