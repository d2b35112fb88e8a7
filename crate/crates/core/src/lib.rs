//! Risk-budgeting portfolios by tamed mirror descent.
//!
//! The crate solves `min_y g(r(y)) - sum_i b_i log y_i` over the positive
//! orthant, where `r` is Expected Shortfall or a deviation measure, either
//! semi-analytically under a two-component Student-t mixture
//! ([`mirror_descent::dmd_run`]) or from return samples
//! ([`mirror_descent::smd_run`], [`mirror_descent::sgd_run`]).

pub mod error;
pub mod market_models;
pub mod mirror_descent;
pub mod parallel;
pub mod rb_solver;
pub mod risk_loss;

pub use error::{Error, Result};
pub use market_models::{MixtureModel, SampleMatrix};
pub use mirror_descent::{OptimizerConfig, RunResult, StepSchedule};
pub use parallel::Parallelism;
pub use rb_solver::{ObjectiveContext, PortfolioReport, RiskBudget};
pub use risk_loss::MeasureSpec;
