//! Plug-in asymptotic covariances, standard errors and Wald tests for a fitted model.
//!
//! The coefficient block uses a sandwich over the nonzero coefficients; the threshold and
//! direction block uses kernel estimates of the conditional moments of the jump sizes at each
//! threshold. The two blocks are reported separately since they are asymptotically independent.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::linalg::{dot, inverse_spd, pinv, Matrix};
use crate::model::{design_expand, Dataset, FitMode, ModelFit};
use crate::normal::{self, two_sided_p};
use crate::penalty::PenaltySpec;

#[allow(unused_imports)]
use num_traits::Float;

/// Kernel density values below this mark a threshold sitting in a density hole.
pub const DENSITY_FLOOR: f64 = 1e-6;
const PINV_TOL: f64 = 1e-10;

/// `rss / (n - df)` with `df` the number of nonzero coefficients.
pub fn estimate_sigma2(fit: &ModelFit, data: &Dataset) -> Result<f64> {
    let n = data.n();
    let df = fit.nonzero_count();
    if df >= n {
        return Err(Error::DegreesOfFreedom { df, n });
    }
    Ok(fit.rss / (n - df) as f64)
}

static PI_CACHE: AtomicU64 = AtomicU64::new(0);

/// `integral of pdf(s)^2 (1(s > 0) - cdf(s))^2 ds`, by adaptive Simpson quadrature.
pub fn pi_constant() -> f64 {
    let bits = PI_CACHE.load(Ordering::Relaxed);
    if bits != 0 {
        return f64::from_bits(bits);
    }
    // The integrand is even, and beyond 12 it is below 1e-60.
    let f = |s: f64| {
        let t = normal::pdf(s) * normal::sf(s);
        t * t
    };
    let value = 2.0 * adaptive_simpson(&f, 0.0, 12.0, 1e-14, 50);
    PI_CACHE.store(value.to_bits(), Ordering::Relaxed);
    value
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Positions of the nonzero entries of the stacked coefficient vector.
pub fn active_indices(fit: &ModelFit) -> Vec<usize> {
    fit.coeffs
        .gamma()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Finite-sample covariance of the nonzero coefficients,
/// `(V11 + Gamma)^-1 Sigma1 (V11 + Gamma)^-1 / n`, with `V11 = 2 D'D / n`,
/// `Sigma1 = 4 sigma^2 D'D / n` over the active columns `D` of the indicator design and
/// `Gamma` the penalty curvature at the estimates. `spec` carries the selected `lambda`.
pub fn covariance_gamma(fit: &ModelFit, data: &Dataset, spec: &PenaltySpec) -> Result<Matrix> {
    let active = active_indices(fit);
    if active.is_empty() {
        return Err(Error::InvalidInput("no nonzero coefficients".into()));
    }
    let n = data.n() as f64;
    let sigma2 = estimate_sigma2(fit, data)?;
    let design = design_expand(data, &fit.theta, &fit.thresholds)?;
    let rows: Vec<usize> = (0..data.n()).collect();
    let d = design.select(&rows, &active);
    let m = d.gram(n);
    let gamma = fit.coeffs.gamma();
    let mut bread = m.clone();
    bread.scale(2.0);
    for (k, &j) in active.iter().enumerate() {
        bread[(k, k)] += spec.second_derivative(gamma[j].abs());
    }
    let inv = inverse_spd(&bread)?;
    let mut meat = m;
    meat.scale(4.0 * sigma2);
    let mut cov = inv.matmul(&meat).matmul(&inv);
    cov.scale(1.0 / n);
    cov.symmetrize();
    Ok(cov)
}

/// Silverman's rule of thumb, `0.9 min(sd, iqr / 1.34) n^(-1/5)`.
pub fn silverman_bandwidth(w: &[f64]) -> f64 {
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let sd = (w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = w.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let spread = if spread > 0.0 { spread } else { 1.0 };
    0.9 * spread * n.powf(-0.2)
}

/// Kernel plug-ins at one threshold. Each is a conditional moment times the density of the
/// index there.
struct LocalMoments {
    density: f64,
    /// `E[(x'delta)^2 | w = a] f(a)`.
    a2: f64,
    /// `E[(x'delta)^4 | w = a] f(a)`.
    b4: f64,
    /// `E[z (x'delta)^2 | w = a] f(a)`.
    zj: Vec<f64>,
    /// `E[z z' (x'delta)^2 | w = a] f(a)`.
    g: Matrix,
    /// `E[z z' (x'delta)^4 | w = a] f(a)`.
    h: Matrix,
}

fn local_moments(data: &Dataset, w: &[f64], delta: &[f64], a: f64, bw: f64) -> LocalMoments {
    let n = data.n();
    let d = data.d();
    let mut out = LocalMoments {
        density: 0.0,
        a2: 0.0,
        b4: 0.0,
        zj: vec![0.0; d],
        g: Matrix::zeros(d, d),
        h: Matrix::zeros(d, d),
    };
    let scale = 1.0 / (n as f64 * bw);
    for i in 0..n {
        let k = normal::pdf((w[i] - a) / bw) * scale;
        if k == 0.0 {
            continue;
        }
        let j = dot(data.x.row(i), delta);
        let j2 = j * j;
        let z = data.z.row(i);
        out.density += k;
        out.a2 += k * j2;
        out.b4 += k * j2 * j2;
        for u in 0..d {
            out.zj[u] += k * j2 * z[u];
            for v in 0..d {
                let zz = k * z[u] * z[v];
                out.g[(u, v)] += zz * j2;
                out.h[(u, v)] += zz * j2 * j2;
            }
        }
    }
    out
}

/// Covariance of `(a, theta)` (`theta` alone for a single plane with the threshold fixed at
/// zero; `a` alone when `z` is one-dimensional), `(h/n) V^+ Omega V^+'` with `h` the smoothing
/// bandwidth of the fit. `kernel_bandwidth` defaults to Silverman's rule on the fitted index.
pub fn covariance_a_theta(fit: &ModelFit, data: &Dataset, kernel_bandwidth: Option<f64>) -> Result<Matrix> {
    let s = fit.s();
    if s == 0 {
        return Err(Error::InvalidInput("no thresholds to make inference on".into()));
    }
    let h = fit.bandwidth;
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("fit carries no smoothing bandwidth ({h})")));
    }
    let theta = fit.theta.values();
    let d = data.d();
    let w = data.index(theta);
    let bw = kernel_bandwidth.unwrap_or_else(|| silverman_bandwidth(&w));
    if !(bw > 0.0) {
        return Err(Error::InvalidInput(format!(
            "kernel bandwidth must be positive, got {bw}"
        )));
    }
    let n = data.n() as f64;
    let sigma2 = estimate_sigma2(fit, data)?;
    let pi = pi_constant();
    let root_pi = PI.sqrt();

    let mut moments = Vec::with_capacity(s);
    for (j, &a) in fit.thresholds.values().iter().enumerate() {
        let m = local_moments(data, &w, &fit.coeffs.deltas[j], a, bw);
        if m.density < DENSITY_FLOOR {
            return Err(Error::DensityHole(format!(
                "index density {:.3e} at threshold {a}",
                m.density
            )));
        }
        moments.push(m);
    }

    let with_a = fit.mode == FitMode::Multi;
    let with_theta = d > 1;
    let na = if with_a { s } else { 0 };
    let nt = if with_theta { d } else { 0 };
    let k = na + nt;
    if k == 0 {
        return Err(Error::InvalidInput("nothing to make inference on".into()));
    }

    let mut proj = Matrix::identity(d);
    for u in 0..d {
        for v in 0..d {
            proj[(u, v)] -= theta[u] * theta[v];
        }
    }

    let mut v = Matrix::zeros(k, k);
    let mut omega = Matrix::zeros(k, k);
    if with_a {
        for (j, m) in moments.iter().enumerate() {
            v[(j, j)] = m.a2 / root_pi;
            omega[(j, j)] = 4.0 * (sigma2 / (2.0 * root_pi) * m.a2 + pi * m.b4);
            if with_theta {
                // Upper-right block holds V23, lower-left P V23'.
                for u in 0..d {
                    v[(j, na + u)] = -m.zj[u] / root_pi;
                }
                for u in 0..d {
                    let pv: f64 = (0..d).map(|t| proj[(u, t)] * -m.zj[t] / root_pi).sum();
                    v[(na + u, j)] = pv;
                }
            }
        }
    }
    if with_theta {
        let mut v33 = Matrix::zeros(d, d);
        let mut sigma3 = Matrix::zeros(d, d);
        for m in &moments {
            for u in 0..d {
                for t in 0..d {
                    v33[(u, t)] += m.g[(u, t)] / root_pi;
                    sigma3[(u, t)] += 4.0 * (sigma2 / (2.0 * root_pi) * m.g[(u, t)] + pi * m.h[(u, t)]);
                }
            }
        }
        let pv33 = proj.matmul(&v33);
        let psp = proj.matmul(&sigma3).matmul(&proj);
        for u in 0..d {
            for t in 0..d {
                v[(na + u, na + t)] = pv33[(u, t)];
                omega[(na + u, na + t)] = psp[(u, t)];
            }
        }
    }

    let vp = pinv(&v, PINV_TOL);
    let mut cov = vp.matmul(&omega).matmul(&vp.transpose());
    cov.scale(h / n);
    cov.symmetrize();
    if !cov.is_finite() {
        return Err(Error::NonFinite("threshold covariance".into()));
    }
    Ok(cov)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    /// Penalty at the selected regularization level.
    pub penalty: PenaltySpec,
    pub kernel_bandwidth: Option<f64>,
}

impl InferenceConfig {
    /// Penalty family of `template` at the fit's selected `lambda`.
    pub fn for_fit(fit: &ModelFit, template: &PenaltySpec) -> Result<Self> {
        Ok(Self {
            penalty: template.with_lambda(fit.lambda)?,
            kernel_bandwidth: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticReport {
    /// Positions of the nonzero stacked coefficients.
    pub active_indices: Vec<usize>,
    pub cov_gamma: Matrix,
    /// `None` when there are no thresholds or a threshold sits where the index has no density.
    pub cov_a_theta: Option<Matrix>,
    /// Set when the threshold block was skipped because of a density hole.
    pub density_hole: bool,
    /// One entry per parameter in the order of [`AsymptoticReport::parameter_layout`]; `None`
    /// for excluded coefficients and unavailable blocks.
    pub se: Vec<Option<f64>>,
    pub z: Vec<Option<f64>>,
    pub p_values: Vec<Option<f64>>,
}

/// Parameter blocks in report order: stacked coefficients, then thresholds (multi mode), then
/// the plane direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParameterLayout {
    pub gamma: usize,
    pub thresholds: usize,
    pub theta: usize,
}

impl AsymptoticReport {
    pub fn parameter_layout(fit: &ModelFit) -> ParameterLayout {
        let thresholds = if fit.mode == FitMode::Multi { fit.s() } else { 0 };
        ParameterLayout {
            gamma: fit.coeffs.gamma().len(),
            thresholds,
            theta: if fit.s() > 0 { fit.theta.len() } else { 0 },
        }
    }
}

/// Standard errors and two-sided Wald p-values for every estimated parameter.
pub fn wald_report(fit: &ModelFit, data: &Dataset, config: &InferenceConfig) -> Result<AsymptoticReport> {
    if !fit.converged {
        return Err(Error::InvalidInput("inference needs a converged fit".into()));
    }
    let active = active_indices(fit);
    let cov_gamma = covariance_gamma(fit, data, &config.penalty)?;
    let gamma = fit.coeffs.gamma();
    let layout = AsymptoticReport::parameter_layout(fit);

    let mut estimates = gamma.clone();
    let mut se: Vec<Option<f64>> = vec![None; gamma.len()];
    for (k, &j) in active.iter().enumerate() {
        se[j] = Some(cov_gamma[(k, k)].max(0.0).sqrt());
    }

    let mut density_hole = false;
    let cov_a_theta = if fit.s() == 0 || fit.flags.theta_unidentified {
        None
    } else {
        match covariance_a_theta(fit, data, config.kernel_bandwidth) {
            Ok(c) => Some(c),
            Err(Error::DensityHole(_)) => {
                density_hole = true;
                None
            }
            Err(e) => return Err(e),
        }
    };
    if layout.thresholds > 0 {
        estimates.extend_from_slice(fit.thresholds.values());
    }
    if layout.theta > 0 {
        estimates.extend_from_slice(fit.theta.values());
    }
    let extra = layout.thresholds + layout.theta;
    match &cov_a_theta {
        Some(c) => {
            // The covariance omits the threshold block for a single plane and the direction
            // block for one-dimensional z.
            let has_theta = c.rows() > layout.thresholds;
            for i in 0..layout.thresholds {
                se.push(Some(c[(i, i)].max(0.0).sqrt()));
            }
            for i in 0..layout.theta {
                se.push(has_theta.then(|| c[(layout.thresholds + i, layout.thresholds + i)].max(0.0).sqrt()));
            }
        }
        None => se.extend(core::iter::repeat_n(None, extra)),
    }

    let z: Vec<Option<f64>> = se
        .iter()
        .zip(&estimates)
        .map(|(s, e)| match s {
            Some(s) if *s > 0.0 => Some(e / s),
            Some(_) if *e == 0.0 => Some(0.0),
            _ => None,
        })
        .collect();
    let p_values = z.iter().map(|z| z.map(two_sided_p)).collect();
    Ok(AsymptoticReport {
        active_indices: active,
        cov_gamma,
        cov_a_theta,
        density_hole,
        se,
        z,
        p_values,
    })
}
