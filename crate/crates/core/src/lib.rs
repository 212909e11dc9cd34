//! Nonnegative structured Kruskal tensor regression.
//!
//! Linear and logistic regression on tensor covariates with a rank-`R` CP
//! coefficient, per-mode hybrid penalties (ℓ1, total variation, ridge,
//! nonnegativity), alternating block updates solved by ADMM, BIC rank
//! selection and a synthetic benchmark harness.

pub mod admm;
pub mod config;
pub mod error;
pub mod io;
pub mod loss;
pub mod model;
pub mod regularizer;
pub mod selection;
pub mod synthetic;
pub mod tensor;

pub use admm::{solve_subproblem, AdmmOptions, AdmmState, LineSearch, NonnegHandling, RhoRule, Subproblem};
pub use error::{ErrorKind, NsktrError, Result};
pub use loss::Loss;
pub use model::{assemble_design, fit, loss_value, objective, predict, Dataset, FitOptions, FitReport, Init};
pub use regularizer::{DifferenceOperator, ModeRegConfig};
pub use tensor::{DenseTensor, KruskalModel, Matrix, Vector};
