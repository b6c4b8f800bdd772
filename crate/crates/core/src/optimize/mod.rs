//! Smoothed objectives, the sphere-constrained quasi-Newton solver and the penalized
//! least-squares coordinate-descent solvers.

mod cd;
mod smooth;
mod sphere;

pub use cd::{cd_penalized_ls, gcd_penalized_ls, lambda_max_coordinates, lambda_max_groups, CdFit, GramSystem};
pub(crate) use smooth::bandwidth_with_rate;
pub use smooth::{
    default_bandwidth, profiled_objective, smoothed_design, smoothed_gradient, smoothed_indicator, smoothed_objective,
    SmoothedGradient, SmoothingSpec,
};
pub use sphere::{minimize_with_sphere_block, sphere_optimize, Minimum};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub max_outer_iter: usize,
    pub max_inner_iter: usize,
    /// Relative objective change for outer loops and the quasi-Newton solver.
    pub tol: f64,
    /// Maximum coefficient change for the coordinate-descent solvers.
    pub cd_tol: f64,
    pub max_sweeps: usize,
    pub multistarts: usize,
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_outer_iter: 50,
            max_inner_iter: 200,
            tol: 1e-6,
            cd_tol: 1e-7,
            max_sweeps: 10_000,
            multistarts: 10,
            seed: 0,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.cd_tol > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        if self.max_outer_iter == 0 || self.max_inner_iter == 0 || self.max_sweeps == 0 {
            return Err(Error::InvalidInput("iteration counts must be at least 1".into()));
        }
        Ok(())
    }
}
