//! Branching diffusions with Ulam–Harris genealogies, optimal stopping
//! lines on them, and the obstacle problem for the associated value
//! function.
//!
//! - [`labels`]: particle labels and the ancestry order.
//! - [`model`]: coefficients, offspring laws, rewards, moment bounds.
//! - [`simulator`]: exact-event, Euler-path forest simulation.
//! - [`stopping`]: stopping rules and their lines.
//! - [`reward`]: line rewards and Monte Carlo values.
//! - [`pde`]: finite-difference obstacle solver.
//! - [`verify`]: Monte Carlo against PDE cross-checks.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod labels;
pub mod model;
pub mod pde;
pub mod reward;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod stopping;
pub mod verify;

pub use error::{Error, Result};
pub use labels::Label;
pub use model::{ModelSpec, OffspringLaw};
pub use pde::{SolverSettings, ValueGrid};
pub use reward::{Discounting, McEstimate, McSettings};
pub use simulator::{simulate_forest, GenealogyRecord, SimOptions};
pub use stopping::{CutPolicy, LineOutcome, RuleKind, RuleSpec, StoppingRule};
pub use verify::{Thresholds, VerificationReport};
