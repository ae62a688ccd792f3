//! Locally D-optimal item calibration designs for the Rasch Poisson counts
//! model and its Poisson-Gamma (negative binomial) extension with `K` binary
//! item features.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: mean/variance structure and the inverse weight function `q`.
//! - [`fisher`]: designs, information matrices and the sensitivity function.
//! - [`optimality`]: pairwise and vertex-wise conditions for the one-feature
//!   design, equivalence-theorem certificates and D-efficiencies.
//! - [`optimizer`]: multiplicative weight updates over all `2^K` vertices and
//!   efficient rounding to exact designs.
//! - [`simulate`]: Monte-Carlo checks of the predicted estimator covariance.

pub mod error;
pub mod fisher;
pub mod model;
pub mod optimality;
pub mod optimizer;
pub mod simulate;

mod linalg;
mod scan;

pub use error::{DesignError, Result};
pub use fisher::{closed_form_sensitivity_xi0, info_matrix, log_det, sensitivity, Design, DesignPoint, InfoMatrix};
pub use model::{Family, ItemVector, ModelSpec, StandardizedParams};
pub use optimality::{CertificationReport, ConditionReport, Witness};
pub use optimizer::{full_factorial, optimize, round_to_exact, xi0, OptimizeOptions, OptimizeReport};

/// Largest `K` for operations that enumerate every vertex of `{0,1}^K`.
pub const MAX_ENUM_K: usize = 16;

/// Largest `K` an [`ItemVector`] can hold.
pub const MAX_K: usize = 64;
