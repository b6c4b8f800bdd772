//! Multi-threshold change-plane regression.
//!
//! A response is modelled as `y = x'(beta + delta_1 1(w > a_1) + ... + delta_s 1(w > a_s)) + e`
//! where the grouping index `w = z'theta` is a linear combination of grouping covariates and
//! the thresholds `a_1 < ... < a_s` cut the sample into `s + 1` parallel slabs. The crate
//! estimates the number of slabs, the thresholds, the plane direction and sparse per-group
//! coefficients:
//!
//! * [`mcpl`] runs the two-stage procedure: a splitting stage that orders the sample by the
//!   current index, fits a group-penalized cumulative block design and reads off the number of
//!   jumps, followed by a smoothed refining stage over `(gamma, a, theta)`.
//! * [`scpl`] fits the single change-plane model with an intercept-augmented plane and the
//!   threshold pinned at zero.
//! * [`inference`] provides plug-in sandwich covariances and Wald tests.
//! * [`simlab`] carries the simulation designs, the NMI metric and the Monte Carlo aggregation.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod inference;
pub mod linalg;
pub mod mcpl;
pub mod model;
pub mod normal;
pub mod optimize;
pub mod penalty;
pub mod scpl;
pub mod simlab;
mod stage;
pub mod tuning;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use mcpl::{fit_mcpl, McplConfig};
pub use model::{CoefficientSet, Dataset, ModelFit, ThetaVector, Thresholds};
pub use penalty::{PenaltyFamily, PenaltySpec};
pub use scpl::{fit_scpl, ScplConfig};
