//! Single change plane: `y = x'beta + x'delta 1(z'theta > 0) + e` with an intercept-augmented
//! `z`, fitted by alternating a direction step on the smoothed loss with a penalized
//! coefficient step on the smoothed design.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{flip_orientation, CoefficientSet, Dataset, FitMode, ModelFit, ThetaVector, Thresholds};
use crate::optimize::{cd_penalized_ls, default_bandwidth, OptimizerSettings};
use crate::penalty::PenaltySpec;
use crate::stage::{fit_penalized, optimize_plane, penalty_total, pilot_plane, smoothed_system, Profile};
use crate::tuning::LambdaChoice;

#[derive(Debug, Clone, PartialEq)]
pub struct ScplConfig {
    /// Family and concavity; the regularization level comes from `lambda`.
    pub penalty: PenaltySpec,
    pub lambda: LambdaChoice,
    /// Smoothing bandwidth; `None` uses `sd(z'theta) n^(-0.7)` at the pilot direction.
    pub bandwidth: Option<f64>,
    pub settings: OptimizerSettings,
    /// Starting direction; `None` runs the multistart pilot.
    pub theta0: Option<Vec<f64>>,
}

impl Default for ScplConfig {
    fn default() -> Self {
        Self {
            penalty: PenaltySpec::scad(0.0).expect("valid"),
            lambda: LambdaChoice::default(),
            bandwidth: None,
            settings: OptimizerSettings::default(),
            theta0: None,
        }
    }
}

fn check_inputs(data: &Dataset, config: &ScplConfig) -> Result<()> {
    config.settings.validate()?;
    if data.d() < 2 {
        return Err(Error::InvalidInput(
            "single change plane needs an intercept and at least one grouping covariate in z".into(),
        ));
    }
    if (0..data.n()).any(|i| data.z[(i, 0)] != 1.0) {
        return Err(Error::InvalidInput("first column of z must be the constant 1".into()));
    }
    if data.n() <= 2 * data.p() {
        return Err(Error::InvalidInput(format!(
            "need n > 2p, got n = {} and p = {}",
            data.n(),
            data.p()
        )));
    }
    if let Some(t) = &config.theta0 {
        if t.len() != data.d() {
            return Err(Error::dim("starting direction length differs from z"));
        }
    }
    if let Some(h) = config.bandwidth {
        if !(h > 0.0) {
            return Err(Error::InvalidInput(format!("bandwidth must be positive, got {h}")));
        }
    }
    Ok(())
}

/// Fits the single change-plane model. `data.z` must start with a constant-1 column.
pub fn fit_scpl(data: &Dataset, config: &ScplConfig) -> Result<ModelFit> {
    check_inputs(data, config)?;
    let settings = &config.settings;
    let a = [0.0];
    let mut theta = match &config.theta0 {
        Some(t) => ThetaVector::canonical(t.clone())?.values().to_vec(),
        None => pilot_plane(data, settings, Some(0.7)),
    };
    let h = config
        .bandwidth
        .unwrap_or_else(|| default_bandwidth(&data.index(&theta)));

    let tuned = fit_penalized(
        smoothed_system(data, &a, &theta, h)?,
        &config.penalty,
        &config.lambda,
        settings,
    )?;
    let spec = tuned.spec;
    let mut gamma = tuned.cd.coef;
    let mut objective = tuned.sys.loss(&gamma) + penalty_total(&spec, &gamma);
    let mask = vec![true; gamma.len()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_outer_iter {
        iterations += 1;
        let coeffs = CoefficientSet::from_gamma(&gamma, data.p())?;
        let plane = optimize_plane(data, &a, false, &theta, h, Profile::Fixed(&coeffs), settings);
        let sys = smoothed_system(data, &a, &plane.theta, h)?;
        let cd = cd_penalized_ls(&sys, &spec, &mask, Some(&gamma), settings.cd_tol, settings.max_sweeps)?;
        let value = sys.loss(&cd.coef) + penalty_total(&spec, &cd.coef);
        if value > objective {
            // Both half-steps are descent steps, so this only reflects rounding.
            converged = true;
            break;
        }
        theta = plane.theta;
        gamma = cd.coef;
        let change = (objective - value).abs() / objective.abs().max(1e-300);
        objective = value;
        if change < settings.tol {
            converged = true;
            break;
        }
    }

    let coeffs = CoefficientSet::from_gamma(&gamma, data.p())?;
    let r = crate::model::largest_coordinate(&theta);
    let (coeffs, theta) = if theta[r] < 0.0 {
        let (c, _, t) = flip_orientation(&coeffs, &a, &theta);
        (c, t)
    } else {
        (coeffs, theta)
    };
    let theta_unidentified = coeffs.deltas[0].iter().all(|v| *v == 0.0);
    let mut fit = ModelFit::assemble(
        FitMode::Single,
        data,
        coeffs,
        Thresholds::new(vec![0.0])?,
        ThetaVector::new(theta, r)?,
    )?;
    fit.objective = objective;
    fit.converged = converged;
    fit.iterations = iterations;
    fit.lambda = spec.lambda();
    fit.bandwidth = h;
    fit.flags.theta_unidentified = theta_unidentified;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    #[test]
    fn rejects_z_without_intercept() {
        let x = Matrix::from_vec(10, 1, vec![1.0; 10]).unwrap();
        let z = Matrix::from_vec(10, 2, (0..20).map(|i| i as f64).collect()).unwrap();
        let data = Dataset::new(vec![0.0; 10], x, z).unwrap();
        assert!(fit_scpl(&data, &ScplConfig::default()).is_err());
    }
}
